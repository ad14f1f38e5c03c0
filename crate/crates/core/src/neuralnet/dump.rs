use std::path::{Path, PathBuf};

use super::{model_forward, LayerSpec, Mode, ModelSpec, Parameters, Tensor};
use crate::imaging::{write_pnm, Image};
use crate::{Error, Result};

/// Tiles the channels of one `[H, W, C]` activation into a grayscale grid,
/// each channel min-max scaled to 0..=255 on its own. Channels are laid out
/// row-major with a one-pixel black gap.
pub fn activation_grid(act: &[f32], h: usize, w: usize, c: usize) -> Result<Image> {
    if act.len() != h * w * c || c == 0 {
        return Err(Error::shape(format!(
            "activation of length {} is not {h}x{w}x{c}",
            act.len()
        )));
    }
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) - 1, rows * (h + 1) - 1);
    let mut out = Image::filled(gw, gh, 1, 0)?;
    for ch in 0..c {
        let vals = || act.iter().skip(ch).step_by(c);
        let lo = vals().fold(f32::INFINITY, |a, &b| a.min(b));
        let hi = vals().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let span = hi - lo;
        let (ox, oy) = ((ch % cols) * (w + 1), (ch / cols) * (h + 1));
        for y in 0..h {
            for x in 0..w {
                let v = act[(y * w + x) * c + ch];
                let g = if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                };
                out.pixel_mut(ox + x, oy + y)[0] = g;
            }
        }
    }
    Ok(out)
}

/// Runs one image through the model in inference mode and writes the
/// activated output of every convolution (the first layer after it that is
/// not batch norm) as `act_L<index>_<layer>.pgm`, where `<index>` is the
/// position of the convolution in the layer list.
pub fn dump_activations(spec: &ModelSpec, params: &Parameters, image: &Tensor, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if image.shape().first() != Some(&1) {
        return Err(Error::shape(format!(
            "activation dumps take a single image, got {:?}",
            image.shape()
        )));
    }
    let (_, cache) = model_forward(spec, params, image, Mode::Infer, true)?;
    let acts = cache.activations.expect("requested activations");
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for conv in spec.convolution_layers() {
        let mut at = conv;
        while at + 1 < spec.layers.len()
            && matches!(spec.layers[at + 1], LayerSpec::BatchNorm { .. } | LayerSpec::Elu { .. })
        {
            at += 1;
            if matches!(spec.layers[at], LayerSpec::Elu { .. }) {
                break;
            }
        }
        let (_, h, w, c) = acts[at].dims4()?;
        let grid = activation_grid(acts[at].data(), h, w, c)?;
        let path = out_dir.join(format!("act_L{conv}_{}.pgm", spec.layers[conv]));
        write_pnm(&grid, &path)?;
        written.push(path);
    }
    Ok(written)
}
