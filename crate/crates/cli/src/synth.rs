//! Synthetic corpus generator: textured rectangles on a plain background,
//! displaced by whole-pixel per-class motion rules, with exact ground-truth
//! flow. Colors sit on the 8-bit grid so PNG round-trips lose nothing, and
//! shapes keep a margin from the borders in both frames.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stillflow::flowio::write_flo;
use stillflow::imagecore::save_png;
use stillflow::seed::derive_seed;
use stillflow::{FlowField, ImageBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Checker,
    Stripes,
}

#[derive(Clone, Debug)]
pub struct ClassRule {
    pub name: String,
    pub texture: Texture,
    pub du: i64,
    pub dv: i64,
}

/// Parses `name=du,dv`. The texture comes from the name's prefix.
pub fn parse_class_rule(text: &str) -> Result<ClassRule> {
    let Some((name, rule)) = text.split_once('=') else {
        bail!("class rule {text:?} is not name=du,dv");
    };
    let name = name.trim();
    let texture = if name.starts_with("checker") {
        Texture::Checker
    } else if name.starts_with("stripes") {
        Texture::Stripes
    } else {
        bail!("class name {name:?} must start with \"checker\" or \"stripes\"");
    };
    let Some((du, dv)) = rule.split_once(',') else {
        bail!("class rule {text:?} is missing the motion as du,dv");
    };
    let parse = |s: &str| -> Result<i64> {
        s.trim()
            .parse::<i64>()
            .with_context(|| format!("motion component {s:?} must be a whole pixel count"))
    };
    Ok(ClassRule {
        name: name.to_owned(),
        texture,
        du: parse(du)?,
        dv: parse(dv)?,
    })
}

pub fn default_classes() -> Vec<ClassRule> {
    vec![
        ClassRule {
            name: "checker".into(),
            texture: Texture::Checker,
            du: 2,
            dv: 0,
        },
        ClassRule {
            name: "stripes".into(),
            texture: Texture::Stripes,
            du: 0,
            dv: -2,
        },
    ]
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub pairs: usize,
    pub classes: Vec<ClassRule>,
    pub margin: usize,
    pub cell: usize,
    pub seed: u64,
}

const BACKGROUND: [u8; 3] = [128, 128, 128];
const CHECKER_COLORS: [[u8; 3]; 2] = [[255, 255, 255], [0, 0, 153]];
// Both palettes keep enough plain-gray contrast that default Canny
// thresholds find the texture at cell sizes 4-8.
const STRIPE_COLORS: [[u8; 3]; 2] = [[255, 255, 179], [0, 0, 51]];

fn texture_color(texture: Texture, lx: usize, ly: usize, cell: usize) -> [u8; 3] {
    match texture {
        Texture::Checker => CHECKER_COLORS[(lx / cell + ly / cell) % 2],
        Texture::Stripes => STRIPE_COLORS[((lx + ly) / cell) % 2],
    }
}

fn render_frame(
    width: usize,
    height: usize,
    origin: (i64, i64),
    shape: (usize, usize),
    texture: Texture,
    cell: usize,
) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, 3, |x, y, c| {
        let lx = x as i64 - origin.0;
        let ly = y as i64 - origin.1;
        let rgb = if (0..shape.0 as i64).contains(&lx) && (0..shape.1 as i64).contains(&ly) {
            texture_color(texture, lx as usize, ly as usize, cell)
        } else {
            BACKGROUND
        };
        rgb[c] as f64 / 255.0
    })
    .expect("synth frame dimensions are validated before rendering")
}

/// Renders every pair, writes frames, truth flow and the manifest, and
/// returns the manifest path.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    if spec.pairs == 0 {
        bail!("requested zero pairs");
    }
    if spec.classes.is_empty() {
        bail!("no texture classes given");
    }
    if spec.cell == 0 {
        bail!("texture cell size must be positive");
    }
    let frames_dir = out_dir.join("frames");
    let flow_dir = out_dir.join("flow");
    fs::create_dir_all(&frames_dir)
        .with_context(|| format!("creating {}", frames_dir.display()))?;
    fs::create_dir_all(&flow_dir).with_context(|| format!("creating {}", flow_dir.display()))?;

    let min_dim = spec.width.min(spec.height);
    let shape_lo = (min_dim / 3).max(2 * spec.cell);
    let shape_hi = (min_dim / 2).max(shape_lo);

    let mut manifest_lines = Vec::with_capacity(spec.pairs);
    for k in 0..spec.pairs {
        let class = &spec.classes[k % spec.classes.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, k as u64));
        let shape_w = rng.gen_range(shape_lo..=shape_hi);
        let shape_h = rng.gen_range(shape_lo..=shape_hi);

        // A placement is valid when the shape honors the margin in both
        // frames, i.e. before and after moving by (du, dv).
        let span = |dim: usize, size: usize, d: i64| -> Result<(i64, i64)> {
            let lo = spec.margin as i64 + (-d).max(0);
            let hi = dim as i64 - spec.margin as i64 - size as i64 - d.max(0);
            if hi < lo {
                bail!(
                    "a {size}px shape moving {d}px cannot keep a {}px margin in a {dim}px image",
                    spec.margin
                );
            }
            Ok((lo, hi))
        };
        let (x_lo, x_hi) = span(spec.width, shape_w, class.du)?;
        let (y_lo, y_hi) = span(spec.height, shape_h, class.dv)?;
        let x0 = rng.gen_range(x_lo..=x_hi);
        let y0 = rng.gen_range(y_lo..=y_hi);

        let frame_a = render_frame(
            spec.width,
            spec.height,
            (x0, y0),
            (shape_w, shape_h),
            class.texture,
            spec.cell,
        );
        let frame_b = render_frame(
            spec.width,
            spec.height,
            (x0 + class.du, y0 + class.dv),
            (shape_w, shape_h),
            class.texture,
            spec.cell,
        );
        let mut flow = FlowField::zeros(spec.width, spec.height);
        for y in y0..y0 + shape_h as i64 {
            for x in x0..x0 + shape_w as i64 {
                flow.set(x as usize, y as usize, class.du as f64, class.dv as f64);
            }
        }

        let a_name = format!("frames/pair_{k:03}_a.png");
        let b_name = format!("frames/pair_{k:03}_b.png");
        let f_name = format!("flow/pair_{k:03}.flo");
        save_png(&frame_a, out_dir.join(&a_name))?;
        save_png(&frame_b, out_dir.join(&b_name))?;
        write_flo(&flow, out_dir.join(&f_name))?;
        manifest_lines.push(format!("{a_name}\t{f_name}\t{b_name}\t{}", class.name));
    }

    let manifest_path = out_dir.join("manifest.tsv");
    let header = "# frame\tflow\tnext\tclass\n";
    fs::write(
        &manifest_path,
        format!("{header}{}\n", manifest_lines.join("\n")),
    )
    .with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(manifest_path)
}
