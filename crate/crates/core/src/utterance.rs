use ndarray::Array2;

/// One training or evaluation utterance: input features (`T0 x D`, one row
/// per 10 ms frame) and its word transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Array2<f64>,
    pub transcript: Vec<String>,
    /// Generating frame-level labels, kept by the synthetic generator for
    /// alignment scoring. Absent for corpora read from disk without them.
    pub frame_labels: Option<Vec<usize>>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }
}
