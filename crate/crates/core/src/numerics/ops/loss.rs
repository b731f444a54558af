use crate::error::{shape_err, Result};
use crate::numerics::{Float, Tensor};

fn rows<T: Float>(x: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, k] if k > 0 => Ok((n, k)),
        _ => shape_err(format!("{what}: expected [N, K], got {:?}", x.shape())),
    }
}

/// Numerically stable `log(sum(exp(row)))` computed in f64.
pub fn logsumexp<T: Float>(row: &[T]) -> f64 {
    let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln()
}

/// Row-wise softmax over the last axis of `[N, K]`.
pub fn softmax<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _) = rows(logits, "softmax")?;
    let mut out = Tensor::zeros(logits.shape());
    for i in 0..n {
        let lse = logsumexp(logits.item(i));
        for (o, &z) in out.item_mut(i).iter_mut().zip(logits.item(i)) {
            *o = T::lit((z.as_f64() - lse).exp());
        }
    }
    Ok(out)
}

/// Row-wise `x_k - logsumexp(x)`, via max subtraction.
pub fn log_softmax<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _) = rows(logits, "log_softmax")?;
    let mut out = Tensor::zeros(logits.shape());
    for i in 0..n {
        let lse = logsumexp(logits.item(i));
        for (o, &z) in out.item_mut(i).iter_mut().zip(logits.item(i)) {
            *o = T::lit(z.as_f64() - lse);
        }
    }
    Ok(out)
}

/// Per-row cross-entropy `-sum_k y_k log softmax(z)_k` (natural log).
pub fn cross_entropy<T: Float>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Vec<f64>> {
    let (n, _) = rows(logits, "cross_entropy")?;
    targets.same_shape(logits, "cross_entropy targets")?;
    Ok((0..n)
        .map(|i| {
            let lse = logsumexp(logits.item(i));
            logits
                .item(i)
                .iter()
                .zip(targets.item(i))
                .map(|(&z, &y)| -y.as_f64() * (z.as_f64() - lse))
                .sum()
        })
        .collect())
}

/// Gradient of per-row cross-entropy w.r.t. logits, each row scaled by `scale`:
/// `scale * (softmax(z) * sum(y) - y)`.
pub fn cross_entropy_backward<T: Float>(logits: &Tensor<T>, targets: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let p = softmax(logits)?;
    targets.same_shape(logits, "cross_entropy targets")?;
    let mut g = Tensor::zeros(logits.shape());
    for i in 0..logits.batch() {
        let mass: f64 = targets.item(i).iter().map(|y| y.as_f64()).sum();
        for ((o, &pk), &yk) in g.item_mut(i).iter_mut().zip(p.item(i)).zip(targets.item(i)) {
            *o = T::lit(scale * (pk.as_f64() * mass - yk.as_f64()));
        }
    }
    Ok(g)
}

/// `mean(x^2)` over all elements, accumulated in f64.
pub fn mean_of_squares<T: Float>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / x.len() as f64
}

/// Gradient of `mean(x^2)`: `2 x / len`.
pub fn mean_of_squares_backward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let s = T::lit(2.0 / x.len().max(1) as f64);
    x.map(|v| v * s)
}

/// One-hot rows `[N, k]` for integer labels.
pub fn one_hot<T: Float>(labels: &[usize], k: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return shape_err(format!("label {l} out of range for {k} classes"));
        }
        t.item_mut(i)[l] = T::one();
    }
    Ok(t)
}
