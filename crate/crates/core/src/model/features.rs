use super::config::ModelConfig;
use crate::data::Detection;
use crate::graph::{DetectionInput, Truth};
use crate::Scalar;

/// `(x1, y1, x2 − x1, y2 − y1, score) ‖ one_hot(category)`.
///
/// Degenerate boxes are filtered by the loaders, not here.
pub fn build_features<T: Scalar>(bbox: [f64; 4], score: f64, category: usize, categories: usize) -> Vec<T> {
    let [x1, y1, x2, y2] = bbox;
    let mut x = Vec::with_capacity(5 + categories);
    x.extend([x1, y1, x2 - x1, y2 - y1, score].map(T::lit));
    x.extend((0..categories).map(|c| if c == category { T::one() } else { T::zero() }));
    x
}

/// Graph inputs for one frame. Rows whose category the model does not track
/// and degenerate boxes are skipped; `source_index` is the row's position in
/// `frame`. With `with_truth`, each input carries the row's track id and
/// ignore flag as training labels.
pub fn frame_inputs<T: Scalar>(frame: &[Detection], config: &ModelConfig, with_truth: bool) -> Vec<DetectionInput<T>> {
    let c = config.categories.len();
    frame
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let k = config.category_index(&d.category)?;
            if d.is_degenerate() {
                return None;
            }
            Some(DetectionInput {
                features: build_features(d.bbox, d.score, k, c),
                source_index: i,
                truth: with_truth.then_some(Truth {
                    track_id: d.track_id,
                    ignore: d.ignore,
                }),
            })
        })
        .collect()
}
