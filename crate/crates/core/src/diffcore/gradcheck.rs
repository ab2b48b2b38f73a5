use std::collections::BTreeMap;

use serde::Serialize;

use super::{DiffError, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of a scalar function of the store with
/// central differences over every parameter entry. The relative error of an
/// entry is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F, E>(store: &ParamStore, epsilon: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<DiffError>,
{
    grad_check_with(store, epsilon, f, |_| {})
}

/// As [`grad_check`], with a hook that may alter the analytic gradients
/// before comparison (used to exercise the failure path).
pub fn grad_check_with<F, E, H>(store: &ParamStore, epsilon: f64, f: F, tamper: H) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<DiffError>,
    H: FnOnce(&mut BTreeMap<String, Tensor>),
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(DiffError::InvalidEpsilon(epsilon).into());
    }
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        let v = tape.value(out);
        v.item()
            .ok_or_else(|| DiffError::NotScalarOutput(v.shape().to_vec()).into())
    };

    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let mut analytic = tape.backward(out, store)?;
    drop(tape);
    tamper(&mut analytic);

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        epsilon,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = store.get(&name).map_or(0, |t| t.numel());
        for i in 0..n {
            let orig = store.get(&name).unwrap().data()[i];
            probe.value_mut(&name).unwrap().data_mut()[i] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.value_mut(&name).unwrap().data_mut()[i] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.value_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[&name].data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.entries_checked == 1 {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        store
            .register("w", Tensor::row_vector(vec![0.3, -1.7, 2.5, 0.01]))
            .unwrap();
        let report = grad_check(&store, 1e-5, |tape: &mut Tape, s: &ParamStore| {
            let w = tape.param(s, "w")?;
            let wt = tape.transpose(w)?;
            tape.matmul(w, wt)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
        assert_eq!(report.entries_checked, 4);
    }

    #[test]
    fn epsilon_out_of_range() {
        let store = ParamStore::new();
        let r = grad_check(&store, 1e-2, |tape: &mut Tape, _s: &ParamStore| {
            tape.constant(Tensor::scalar(0.0))
        });
        assert!(matches!(r, Err(DiffError::InvalidEpsilon(_))));
    }

    #[test]
    fn tampered_gradient_is_detected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(0.5)).unwrap();
        let report = grad_check_with(
            &store,
            1e-5,
            |tape: &mut Tape, s: &ParamStore| {
                let w = tape.param(s, "w")?;
                tape.tanh(w)
            },
            |g| g.get_mut("w").unwrap().data_mut()[0] += 0.5,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.1);
    }
}
