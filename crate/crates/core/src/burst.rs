use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// One frame of a burst, indexed relative to the reference (index 0).
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: i32,
    pub image: Image,
    /// Validity of each pixel; `None` means fully valid.
    pub mask: Option<Mask>,
}

impl Frame {
    pub fn new(index: i32, image: Image) -> Self {
        Frame {
            index,
            image,
            mask: None,
        }
    }
}

/// Ordered set of frames with distinct signed indices and shared dimensions.
#[derive(Debug, Clone)]
pub struct Burst {
    frames: Vec<Frame>,
}

impl Burst {
    pub fn new(mut frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Contract("burst has no frames".into()));
        };
        let dims = first.image.dims();
        for f in &frames {
            if f.image.dims() != dims {
                return Err(Error::Contract(format!(
                    "frame {} has dimensions {:?}, expected {:?}",
                    f.index,
                    f.image.dims(),
                    dims
                )));
            }
            if let Some(m) = &f.mask {
                if (m.width(), m.height()) != dims {
                    return Err(Error::Contract(format!("mask of frame {} has wrong dimensions", f.index)));
                }
            }
        }
        frames.sort_by_key(|f| f.index);
        if frames.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(Error::Contract("duplicate frame index in burst".into()));
        }
        Ok(Burst { frames })
    }

    pub fn from_images(images: impl IntoIterator<Item = (i32, Image)>) -> Result<Self> {
        Self::new(images.into_iter().map(|(i, img)| Frame::new(i, img)).collect())
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].image.dims()
    }

    pub fn indices(&self) -> Vec<i32> {
        self.frames.iter().map(|f| f.index).collect()
    }

    pub fn get(&self, index: i32) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|k| &self.frames[k])
    }

    pub fn reference(&self) -> Result<&Frame> {
        self.get(0)
            .ok_or_else(|| Error::Contract("burst has no reference frame (index 0)".into()))
    }
}
