use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` over every coordinate of
/// every non-frozen parameter. Parameters absent from `analytic` count as zero gradient.
pub fn check_gradient_with<F>(
    store: &mut ParamStore,
    analytic: &Gradients,
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Usage(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().filter(|&id| !store.is_frozen(id)).collect();
    for id in ids {
        let len = store.get(id).len();
        let grad = analytic
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; len]);
        for (i, &analytic_i) in grad.iter().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = loss(store)?;
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = loss(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss probing {}[{i}]",
                    store.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(analytic_i, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Gradient check for a loss built on a [`Graph`]: the same closure supplies the
/// analytic gradient (one backward pass) and every perturbed forward evaluation.
pub fn check_gradient<F>(store: &mut ParamStore, h: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    check_gradient_with(store, &analytic, h, |s| {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        Ok(g.scalar(loss))
    })
}
