use super::{DenseArray, Real};

/// Output width of [`positional_encode`] for `in_dim` input coordinates.
pub fn encoded_dim(in_dim: usize, frequencies: usize, include_input: bool) -> usize {
    in_dim * (usize::from(include_input) + 2 * frequencies)
}

/// Row-wise sinusoidal lift: `[x, sin(2^0 x), cos(2^0 x), ..., sin(2^{F-1} x), cos(2^{F-1} x)]`,
/// where each block spans all input columns.
pub fn positional_encode<S: Real>(
    x: &DenseArray<S>,
    frequencies: usize,
    include_input: bool,
) -> DenseArray<S> {
    let d = x.cols();
    let width = encoded_dim(d, frequencies, include_input);
    let mut out = Vec::with_capacity(x.rows() * width);
    for r in 0..x.rows() {
        let row = x.row(r);
        if include_input {
            out.extend_from_slice(row);
        }
        let mut scale = S::one();
        for _ in 0..frequencies {
            out.extend(row.iter().map(|&v| (scale * v).sin()));
            out.extend(row.iter().map(|&v| (scale * v).cos()));
            scale = scale + scale;
        }
    }
    DenseArray::new(vec![x.rows(), width], out).expect("encoded extents")
}
