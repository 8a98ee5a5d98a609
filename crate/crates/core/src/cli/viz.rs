use crate::motion::Pgm;
use crate::nn::{LayerSpec, Network};

/// Tiles per mosaic row.
pub const TILES_PER_ROW: usize = 8;
const GAP: usize = 2;
const BACKGROUND: u8 = 0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VizError {
    #[error("layer {index} is {kind}, not a convolution")]
    NotConvolution { index: usize, kind: &'static str },
    #[error("network has {layers} layers, no layer {index}")]
    NoSuchLayer { index: usize, layers: usize },
}

/// Renders one filter as a tile. Input channels are laid out in pairs
/// (`dx | dy`) per row when the channel count is even and above 3, and side
/// by side in a single row otherwise. The whole filter shares one min-max
/// normalization; a constant filter renders mid-grey.
fn render_filter(weights: &[f32], channels: usize, k: usize) -> (usize, usize, Vec<u8>) {
    let paired = channels.is_multiple_of(2) && channels > 3;
    let (cols, rows) = if paired { (2, channels / 2) } else { (channels, 1) };
    let (w, h) = (cols * (k + 1) - 1, rows * (k + 1) - 1);
    let lo = weights.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = weights.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut px = vec![BACKGROUND; w * h];
    for c in 0..channels {
        let (col, row) = (c % cols, c / cols);
        for y in 0..k {
            for x in 0..k {
                let v = weights[(c * k + y) * k + x];
                let g = if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    128
                };
                px[(row * (k + 1) + y) * w + col * (k + 1) + x] = g;
            }
        }
    }
    (w, h, px)
}

/// Mosaic of every filter of convolution layer `layer`, row-major with
/// [`TILES_PER_ROW`] tiles per row.
pub fn filter_mosaic(net: &Network, layer: usize) -> Result<Pgm, VizError> {
    let spec = net.layers().get(layer).ok_or(VizError::NoSuchLayer {
        index: layer,
        layers: net.layers().len(),
    })?;
    let &LayerSpec::Conv {
        in_channels,
        out_channels,
        kernel,
        ..
    } = spec
    else {
        return Err(VizError::NotConvolution {
            index: layer,
            kind: spec.kind_name(),
        });
    };
    let weights = net.params()[layer][0].values();
    let per = in_channels * kernel * kernel;
    let tiles: Vec<_> = (0..out_channels)
        .map(|o| render_filter(&weights[o * per..(o + 1) * per], in_channels, kernel))
        .collect();
    let (tw, th) = (tiles[0].0, tiles[0].1);
    let cols = out_channels.min(TILES_PER_ROW);
    let rows = out_channels.div_ceil(TILES_PER_ROW);
    let width = cols * (tw + GAP) + GAP;
    let height = rows * (th + GAP) + GAP;
    let mut data = vec![BACKGROUND; width * height];
    for (i, (_, _, px)) in tiles.iter().enumerate() {
        let (x0, y0) = (GAP + (i % TILES_PER_ROW) * (tw + GAP), GAP + (i / TILES_PER_ROW) * (th + GAP));
        for y in 0..th {
            data[(y0 + y) * width + x0..][..tw].copy_from_slice(&px[y * tw..][..tw]);
        }
    }
    Ok(Pgm { width, height, data })
}

/// Places images left to right, top-aligned, separated by a white bar.
pub fn side_by_side(images: &[Pgm]) -> Pgm {
    let height = images.iter().map(|p| p.height).max().unwrap_or(0);
    let bar = 4;
    let width = images.iter().map(|p| p.width).sum::<usize>() + bar * images.len().saturating_sub(1);
    let mut data = vec![BACKGROUND; width * height];
    let mut x0 = 0;
    for (i, img) in images.iter().enumerate() {
        if i > 0 {
            for y in 0..height {
                data[y * width + x0..][..bar].fill(255);
            }
            x0 += bar;
        }
        for y in 0..img.height {
            data[y * width + x0..][..img.width].copy_from_slice(&img.data[y * img.width..][..img.width]);
        }
        x0 += img.width;
    }
    Pgm { width, height, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_mini_two_stream, Activation};

    #[test]
    fn mosaic_layout() {
        let net = build_mini_two_stream::<f32>(32, 20, 8, Activation::Prelu, 1).unwrap();
        let m = filter_mosaic(&net, 0).unwrap();
        // 32 filters: 4 rows of 8; tile is 2 columns × 10 rows of 7×7.
        let (tw, th) = (2 * 8 - 1, 10 * 8 - 1);
        assert_eq!(m.width, 8 * (tw + GAP) + GAP);
        assert_eq!(m.height, 4 * (th + GAP) + GAP);
        assert!(matches!(filter_mosaic(&net, 1), Err(VizError::NotConvolution { index: 1, .. })));
        assert!(filter_mosaic(&net, 99).is_err());
    }

    #[test]
    fn constant_filter_is_mid_grey() {
        let (_, _, px) = render_filter(&[0.0; 2 * 9], 2, 3);
        assert!(px.iter().filter(|&&p| p != BACKGROUND).all(|&p| p == 128));
        assert_eq!(px.iter().filter(|&&p| p == 128).count(), 18);
        let (_, _, px) = render_filter(&[-1.0, 0.0, 1.0, 0.5], 1, 2);
        assert_eq!(px, vec![0, 128, 255, 191]);
    }

    #[test]
    fn side_by_side_widths() {
        let a = Pgm { width: 3, height: 2, data: vec![1; 6] };
        let b = Pgm { width: 2, height: 4, data: vec![2; 8] };
        let c = side_by_side(&[a, b]);
        assert_eq!((c.width, c.height), (9, 4));
        assert_eq!(c.data[3], 255);
    }
}
