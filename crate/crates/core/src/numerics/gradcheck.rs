//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autodiff::{backward, no_grad, Var};
use super::param::{Binding, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Above this many entries a parameter set is checked on a random subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

fn eval(store: &ParamStore, f: &impl Fn(&Binding) -> Result<Var>) -> Result<f64> {
    let v = no_grad(|| f(&store.bind()))?;
    let x = v.value().data()[0];
    if !x.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation".into()));
    }
    Ok(x)
}

/// Compare the reverse-mode gradient of scalar `f` against central
/// differences for every entry of `params` (all parameters when `None`).
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    store: &mut ParamStore,
    f: impl Fn(&Binding) -> Result<Var>,
    eps: f64,
    params: Option<&[ParamId]>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Argument(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let loss = f(&store.bind())?;
    if loss.value().len() != 1 || !loss.value().data()[0].is_finite() {
        return Err(Error::NonFinite("grad_check base evaluation".into()));
    }
    let grads = backward(&loss)?;
    drop(loss);

    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => store.ids().collect(),
    };
    let total: usize = ids.iter().map(|&id| store.get(id).value.len()).sum();
    let mut entries: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.get(id).value.len()).map(move |i| (id, i)))
        .collect();
    if total > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut picked: Vec<usize> = sample(&mut rng, total, FULL_CHECK_LIMIT).into_vec();
        picked.sort_unstable();
        entries = picked.into_iter().map(|i| entries[i]).collect();
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (id, i) in entries {
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
        let orig = store.get(id).value.data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + eps;
        let plus = eval(store, &f);
        store.get_mut(id).value.data_mut()[i] = orig - eps;
        let minus = eval(store, &f);
        store.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
