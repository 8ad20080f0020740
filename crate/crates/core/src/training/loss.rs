use crate::encoder::Real;
use crate::{Error, ItemId, Result};

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// `B x dim`, gradient w.r.t. the user vectors.
    pub d_users: Vec<T>,
    /// `B x dim`, gradient w.r.t. the item vectors.
    pub d_items: Vec<T>,
    /// `B x B`, gradient w.r.t. the scaled scores `s_ij`.
    pub d_scores: Vec<f64>,
}

/// Mean in-batch softmax cross-entropy with `s_ij = (u_i . v_j) / temperature`;
/// row `i` of `items` is the positive of row `i` of `users`.
pub fn in_batch_loss<T: Real>(users: &[T], items: &[T], dim: usize, temperature: f64) -> Result<LossOutput<T>> {
    in_batch_loss_with_ids(users, items, None, dim, temperature)
}

/// [`in_batch_loss`] where, given item ids, each row's negatives are the
/// distinct in-batch items other than its positive: columns holding the
/// row's own positive item, and repeats of an earlier column's item, are
/// left out of that row's softmax.
pub fn in_batch_loss_with_ids<T: Real>(
    users: &[T],
    items: &[T],
    ids: Option<&[ItemId]>,
    dim: usize,
    temperature: f64,
) -> Result<LossOutput<T>> {
    if dim == 0 || users.len() != items.len() || !users.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "user block {} and item block {} are not matching multiples of dim {dim}",
            users.len(),
            items.len()
        )));
    }
    let b = users.len() / dim;
    if ids.is_some_and(|ids| ids.len() != b) {
        return Err(Error::Shape(format!("{} item ids for a batch of {b}", ids.map_or(0, <[ItemId]>::len))));
    }
    let first: Vec<bool> = match ids {
        Some(ids) => (0..b).map(|j| !ids[..j].contains(&ids[j])).collect(),
        None => vec![true; b],
    };
    let keep = |i: usize, j: usize| match ids {
        None => true,
        Some(ids) => i == j || (ids[j] != ids[i] && first[j]),
    };
    let u: Vec<f64> = users.iter().map(|v| v.as_f64()).collect();
    let v: Vec<f64> = items.iter().map(|x| x.as_f64()).collect();
    let mut s = vec![0.0; b * b];
    for i in 0..b {
        let ui = &u[i * dim..(i + 1) * dim];
        for j in 0..b {
            let vj = &v[j * dim..(j + 1) * dim];
            s[i * b + j] = ui.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>() / temperature;
        }
    }
    if let Some(pos) = s.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            step: 0,
            detail: format!("score[{}][{}] = {}", pos / b, pos % b, s[pos]),
        });
    }

    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut d_scores = vec![0.0; b * b];
    for i in 0..b {
        let row = &s[i * b..(i + 1) * b];
        let live = || (0..b).filter(move |&j| keep(i, j));
        let max = live().map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = live().map(|j| (row[j] - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[i];
        let d = &mut d_scores[i * b..(i + 1) * b];
        for j in live() {
            d[j] = ((row[j] - lse).exp() - if i == j { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    loss *= inv_b;

    let mut du = vec![0.0; b * dim];
    let mut dv = vec![0.0; b * dim];
    for i in 0..b {
        for j in 0..b {
            let g = d_scores[i * b + j] / temperature;
            for k in 0..dim {
                du[i * dim + k] += g * v[j * dim + k];
                dv[j * dim + k] += g * u[i * dim + k];
            }
        }
    }
    Ok(LossOutput {
        loss,
        d_users: du.into_iter().map(T::lit).collect(),
        d_items: dv.into_iter().map(T::lit).collect(),
        d_scores,
    })
}
