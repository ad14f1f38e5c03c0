use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    canny_edges, draw_contours, find_contours, gaussian_blur, histogram, otsu_threshold, threshold_binary,
    to_grayscale, CannyParams, Image,
};
use crate::{Error, Result};

/// Preprocessing applied before the network sees an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Threshold,
    Contour,
    Canny,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Threshold, Method::Contour, Method::Canny];

    pub fn output_channels(self) -> usize {
        match self {
            Method::None => 3,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Threshold => "threshold",
            Method::Contour => "contour",
            Method::Canny => "canny",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "threshold" => Ok(Method::Threshold),
            "contour" => Ok(Method::Contour),
            "canny" => Ok(Method::Canny),
            other => Err(Error::invalid(format!("unknown preprocessing method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    /// Fixed threshold; Otsu's choice when absent.
    pub threshold: Option<u8>,
    /// Blur applied before thresholding in the contour pipeline.
    pub blur_sigma: f64,
    pub canny: CannyParams,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            threshold: None,
            blur_sigma: 1.0,
            canny: CannyParams::default(),
        }
    }
}

fn gray(img: &Image) -> Result<Image> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        to_grayscale(img)
    }
}

fn binarize(img: &Image, fixed: Option<u8>) -> Result<super::BinaryImage> {
    let t = match fixed {
        Some(t) => t,
        None => otsu_threshold(&histogram(img))?,
    };
    Ok(threshold_binary(img, t))
}

pub fn preprocess(img: &Image, method: Method, params: &PreprocessParams) -> Result<Image> {
    match method {
        Method::None => Ok(img.clone()),
        Method::Threshold => Ok(binarize(&gray(img)?, params.threshold)?.into()),
        Method::Contour => {
            let blurred = gaussian_blur(&gray(img)?, params.blur_sigma)?;
            let bin = binarize(&blurred, params.threshold)?;
            let contours = find_contours(&bin);
            Ok(draw_contours(img.width(), img.height(), &contours).into())
        }
        Method::Canny => Ok(canny_edges(&gray(img)?, &params.canny)?.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Image {
        let (w, h) = (24, 20);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let house = (8..16).contains(&x) && (6..14).contains(&y);
                let v = if house {
                    [200, 200, 200]
                } else {
                    [40, 120, 40 + (x % 3) as u8]
                };
                data.extend_from_slice(&v);
            }
        }
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn none_is_identity() {
        let img = scene();
        assert_eq!(preprocess(&img, Method::None, &Default::default()).unwrap(), img);
    }

    #[test]
    fn outputs_are_binary_single_channel() {
        let img = scene();
        for m in [Method::Threshold, Method::Contour, Method::Canny] {
            let out = preprocess(&img, m, &Default::default()).unwrap();
            assert_eq!(out.channels(), 1);
            assert!(out.data().iter().all(|&v| v == 0 || v == 255), "{m}");
        }
        let th = preprocess(&img, Method::Threshold, &Default::default()).unwrap();
        assert_eq!(th.data().iter().filter(|&&v| v == 255).count(), 64);
    }

    #[test]
    fn contour_of_black_is_black() {
        let img = Image::filled(16, 16, 3, 0).unwrap();
        let out = preprocess(&img, Method::Contour, &Default::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn unknown_tag_rejected() {
        assert!(matches!("sobel".parse::<Method>(), Err(Error::InvalidArgument(_))));
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn fixed_threshold_override() {
        let img = scene();
        let p = PreprocessParams {
            threshold: Some(250),
            ..Default::default()
        };
        let out = preprocess(&img, Method::Threshold, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }
}
