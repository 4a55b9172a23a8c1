use super::{AdResult, AutodiffError, Gradients, Graph, ParamStore, Real, Var};

/// Worst coordinate of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tol)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= self.tol).collect()
    }
}

const DENOM_FLOOR: f64 = 1e-8;

fn evaluate<T: Real, F>(store: &ParamStore<T>, f: &F) -> AdResult<f64>
where
    F: for<'g> Fn(&mut Graph<'g, T>) -> AdResult<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    if g.value(loss).len() != 1 {
        return Err(AutodiffError::NotScalar(g.shape(loss).to_vec()));
    }
    Ok(g.value(loss).item().to_f64_lossless())
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences `(f(p+ε) − f(p−ε)) / 2ε`, coordinate by coordinate.
pub fn grad_check<T: Real, F>(store: &ParamStore<T>, f: F, eps: f64, tol: f64) -> AdResult<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, T>) -> AdResult<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    grad_check_against(store, f, &analytic, eps, tol)
}

/// Like [`grad_check`] but with caller-supplied analytic gradients.
pub fn grad_check_against<T: Real, F>(
    store: &ParamStore<T>,
    f: F,
    analytic: &Gradients<T>,
    eps: f64,
    tol: f64,
) -> AdResult<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, T>) -> AdResult<Var>,
{
    let base = evaluate(store, &f)?;
    let again = evaluate(store, &f)?;
    if base.to_bits() != again.to_bits() {
        return Err(AutodiffError::NonDeterministic((base - again).abs()));
    }

    let mut work = store.clone();
    let step = T::lit(eps);
    let mut params = Vec::new();
    for id in store.ids() {
        if !store.entry(id).trainable {
            continue;
        }
        let grad = analytic.dense(store, id);
        let mut check = ParamCheck {
            name: store.entry(id).name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = evaluate(&work, &f)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = evaluate(&work, &f)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i].to_f64_lossless();
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > check.max_rel_error || i == 0 {
                check.max_rel_error = check.max_rel_error.max(rel);
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { params, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn quadratic_is_near_exact() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::row(&[0.3, -1.2, 2.0])).unwrap();
        let report = grad_check(
            &s,
            |g| {
                let w = g.param_named("w")?;
                let sq = g.mul(w, w)?;
                g.weighted_sum(sq, &[1.0, 2.0, 0.5])
            },
            1e-5,
            1e-10,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::row(&[0.3, -1.2])).unwrap();
        s.add("b", Tensor::scalar(0.7)).unwrap();
        let f = |g: &mut Graph<'_, f64>| {
            let a = g.param_named("a")?;
            let b = g.param_named("b")?;
            let t = g.tanh(a)?;
            let s = g.sum(t)?;
            let p = g.mul(s, b)?;
            g.sum(p)
        };
        let mut g = Graph::new(&s);
        let loss = f(&mut g).unwrap();
        let mut grads = g.backward(loss).unwrap();
        grads.get_mut(a).unwrap().scale_assign(1.1);
        let report = grad_check_against(&s, f, &grads, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
        let failures = report.failures();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].name, "a");
    }

    #[test]
    fn non_determinism_detected() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::row(&[1.0])).unwrap();
        let calls = AtomicUsize::new(0);
        let err = grad_check(
            &s,
            |g| {
                let n = calls.fetch_add(1, Ordering::SeqCst) as f64;
                let w = g.param_named("w")?;
                let c = g.constant(Tensor::row(&[n]))?;
                let p = g.mul(w, c)?;
                g.sum(p)
            },
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonDeterministic(_)));
    }
}
