//! Owned multi-channel float images, row-major with channels last.

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![T::zero(); width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image data length");
        Self { width, height, channels, data }
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.index(row, col, ch)]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|x| f(*x)).collect(), ..*self }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }

    /// One channel as a single-channel image.
    pub fn channel(&self, ch: usize) -> Self {
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        Self { width: self.width, height: self.height, channels: 1, data }
    }

    /// Channels reordered so output channel `k` is input channel `perm[k]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Self {
        let mut out = Self::new(self.width, self.height, perm.len());
        for p in 0..self.width * self.height {
            for (k, &src) in perm.iter().enumerate() {
                out.data[p * perm.len() + k] = self.data[p * self.channels + src];
            }
        }
        out
    }
}

impl<T: Real> std::ops::Index<(usize, usize, usize)> for Image<T> {
    type Output = T;
    fn index(&self, (r, c, ch): (usize, usize, usize)) -> &T {
        &self.data[(r * self.width + c) * self.channels + ch]
    }
}

impl<T: Real> std::ops::IndexMut<(usize, usize, usize)> for Image<T> {
    fn index_mut(&mut self, (r, c, ch): (usize, usize, usize)) -> &mut T {
        &mut self.data[(r * self.width + c) * self.channels + ch]
    }
}
