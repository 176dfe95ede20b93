//! Shape/stride helpers shared by the op implementations.

/// Named axis constants for readability at call sites.
pub struct Axis;
impl Axis {
    pub const BATCH: usize = 0;
    pub const CHANNEL: usize = 1;
}

/// Row-major strides for a shape.
pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Decompose a linear row-major index into coordinates.
pub fn unravel(mut idx: usize, shape: &[usize], out: &mut [usize]) {
    for d in (0..shape.len()).rev() {
        out[d] = idx % shape[d];
        idx /= shape[d];
    }
}


/// Leading "batch" broadcast of two shapes that must agree on their last
/// `tail` dims. Returns the broadcast batch shape, or None if incompatible.
/// Only size-1 expansion is allowed, and only on the leading dims.
pub fn broadcast_batch(lhs: &[usize], rhs: &[usize], tail: usize) -> Option<Vec<usize>> {
    let lb = &lhs[..lhs.len() - tail];
    let rb = &rhs[..rhs.len() - tail];
    let n = lb.len().max(rb.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let a = if i < n - lb.len() { 1 } else { lb[i - (n - lb.len())] };
        let b = if i < n - rb.len() { 1 } else { rb[i - (n - rb.len())] };
        if a == b {
            out[i] = a;
        } else if a == 1 {
            out[i] = b;
        } else if b == 1 {
            out[i] = a;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Map a linear index in the broadcast batch shape onto the linear index in
/// an operand's (right-aligned, possibly shorter, possibly 1-sized) batch.
pub fn broadcast_src_index(batch_idx: usize, batch_shape: &[usize], src_batch: &[usize]) -> usize {
    let n = batch_shape.len();
    let offset = n - src_batch.len();
    let src_strides = contiguous_strides(src_batch);
    let mut rem = batch_idx;
    let mut src = 0usize;
    for d in (0..n).rev() {
        let coord = rem % batch_shape[d];
        rem /= batch_shape[d];
        if d >= offset {
            let sd = d - offset;
            if src_batch[sd] != 1 {
                src += coord * src_strides[sd];
            }
        }
    }
    src
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        assert_eq!(contiguous_strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(contiguous_strides(&[5]), vec![1]);
        assert!(contiguous_strides(&[]).is_empty());
    }

    #[test]
    fn batch_broadcast_rules() {
        assert_eq!(broadcast_batch(&[4, 2, 3], &[2, 5], 2), Some(vec![4]));
        assert_eq!(broadcast_batch(&[1, 7, 2, 3], &[6, 7, 3, 5], 2), Some(vec![6, 7]));
        assert_eq!(broadcast_batch(&[2, 2, 3], &[3, 3, 5], 2), None);
    }

    #[test]
    fn broadcast_index_maps_ones_to_zero() {
        // batch [2,3], src [1,3]
        assert_eq!(broadcast_src_index(4, &[2, 3], &[1, 3]), 1);
        // src [] broadcasts everywhere
        assert_eq!(broadcast_src_index(5, &[2, 3], &[]), 0);
    }
}
