use crate::nets::{DenseCache, DenseStack, Mat, NetError, Scalar};

/// Activations of a front-plus-heads pass over a batch whose rows may use
/// different heads.
#[derive(Clone, Debug)]
pub struct RoutedCache<T> {
    pub front: DenseCache<T>,
    /// `(head, rows, cache)` for every head that received rows.
    pub groups: Vec<(usize, Vec<usize>, DenseCache<T>)>,
}

/// Runs `front` on the whole batch, then row `r` through `heads[route[r]]`.
/// Returns the per-row head outputs in batch order.
pub fn routed_forward<T: Scalar>(
    front: &DenseStack<T>,
    heads: &[DenseStack<T>],
    input: &Mat<T>,
    route: &[usize],
) -> Result<(Mat<T>, RoutedCache<T>), NetError> {
    if route.len() != input.rows {
        return Err(NetError::ShapeMismatch { what: "route length".into(), expected: input.rows, got: route.len() });
    }
    if let Some(r) = route.iter().position(|&h| h >= heads.len()) {
        return Err(NetError::ShapeMismatch {
            what: format!("route of row {r}"),
            expected: heads.len(),
            got: route[r],
        });
    }
    let front_cache = front.forward(input)?;
    let latent = front_cache.output();
    let out_dim = heads.first().map_or(0, |h| h.output_size());
    let mut out = Mat::zeros(input.rows, out_dim);
    let mut groups = Vec::new();
    for (h, head) in heads.iter().enumerate() {
        let rows: Vec<usize> = (0..route.len()).filter(|&r| route[r] == h).collect();
        if rows.is_empty() {
            continue;
        }
        let cache = head.forward(&latent.gather_rows(&rows))?;
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(cache.output().row(k));
        }
        groups.push((h, rows, cache));
    }
    Ok((out, RoutedCache { front: front_cache, groups }))
}

/// Reverse of [`routed_forward`]. Gradients accumulate into `front_grad` and
/// into `head_grads[h]` only for heads that received rows.
pub fn routed_backward<T: Scalar>(
    front: &DenseStack<T>,
    heads: &[DenseStack<T>],
    cache: &RoutedCache<T>,
    output_grad: &Mat<T>,
    front_grad: &mut DenseStack<T>,
    head_grads: &mut [DenseStack<T>],
) -> Result<(), NetError> {
    let latent = cache.front.output();
    let mut d_latent = Mat::zeros(latent.rows, latent.cols);
    for (h, rows, head_cache) in &cache.groups {
        let d_out = output_grad.gather_rows(rows);
        let d_in = heads[*h].backward(head_cache, &d_out, &mut head_grads[*h])?;
        for (k, &r) in rows.iter().enumerate() {
            d_latent.row_mut(r).copy_from_slice(d_in.row(k));
        }
    }
    front.backward(&cache.front, &d_latent, front_grad)?;
    Ok(())
}
