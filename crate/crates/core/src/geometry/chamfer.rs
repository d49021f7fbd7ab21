use rayon::prelude::*;

use super::index::KdTree;
use crate::{Error, Result, Vec3};

/// Symmetric Chamfer distance: the two mean nearest-neighbor distances
/// (unsquared), averaged.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ab = mean_nearest(a, &KdTree::new(b));
    let ba = mean_nearest(b, &KdTree::new(a));
    Ok(0.5 * (ab + ba))
}

fn mean_nearest(queries: &[Vec3], tree: &KdTree) -> f64 {
    let d: Vec<f64> = queries
        .par_iter()
        .map(|q| tree.nearest(q).expect("non-empty tree").1.sqrt())
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}
