use super::FeatureWindow;
use crate::error::{Error, Result};

/// Lower bound on the per-coefficient standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-coefficient z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Streaming mean/variance (Welford) over window rows.
#[derive(Clone, Debug, Default)]
pub struct NormalizerAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl NormalizerAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_row(&mut self, row: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; row.len()];
            self.m2 = vec![0.0; row.len()];
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub fn add_window_rows(&mut self, data: &[f64], cols: usize) {
        for row in data.chunks_exact(cols) {
            self.add_row(row);
        }
    }

    pub fn finish(self) -> Result<Normalizer> {
        if self.count == 0 {
            return Err(Error::Empty("normalizer training set"));
        }
        let n = self.count as f64;
        Ok(Normalizer {
            std: self.m2.iter().map(|s| (s / n).sqrt()).collect(),
            mean: self.mean,
        })
    }
}

impl Normalizer {
    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            std: vec![1.0; cols],
        }
    }

    /// Population mean and standard deviation per column over every row of
    /// every window.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a FeatureWindow>) -> Result<Self> {
        let mut acc = NormalizerAccumulator::new();
        for w in windows {
            acc.add_window_rows(w.coeffs(), w.cols());
        }
        acc.finish()
    }

    pub fn cols(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / max(std, 1e-8)` elementwise on row-major window data.
    pub fn apply_slice(&self, data: &[f64], out: &mut Vec<f64>) {
        let cols = self.cols();
        out.clear();
        out.extend(data.iter().enumerate().map(|(i, &x)| {
            let c = i % cols;
            (x - self.mean[c]) / self.std[c].max(STD_FLOOR)
        }));
    }

    pub fn apply(&self, window: &FeatureWindow) -> Result<FeatureWindow> {
        if window.cols() != self.cols() {
            return Err(Error::Length {
                what: "normalizer columns",
                expected: self.cols(),
                got: window.cols(),
            });
        }
        let mut out = Vec::with_capacity(window.coeffs().len());
        self.apply_slice(window.coeffs(), &mut out);
        FeatureWindow::new(window.frame_index, window.cols(), out)
    }
}
