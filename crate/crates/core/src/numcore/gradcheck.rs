use super::{Graph, NumError, ParameterStore, Var};

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not produce spurious failures.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_parameter: String,
    pub checked: usize,
}

/// Compares tape gradients of a scalar expression against central finite
/// differences with step `h`, over every scalar of every parameter.
///
/// `rel = |analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn check_gradients<F>(
    store: &mut ParameterStore,
    h: f64,
    f: F,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var, NumError>,
{
    let eval = |store: &ParameterStore| -> Result<f64, NumError> {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        Ok(g.scalar(root))
    };

    store.zero_grad();
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    g.backward(root, store)?;

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_parameter: String::new(),
        checked: 0,
    };
    for name in names {
        let analytic = store.grad(&name).expect("present").clone();
        for i in 0..analytic.len() {
            let orig = store.value(&name).expect("present").data()[i];
            store.value_mut(&name).expect("present").data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(&name).expect("present").data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_parameter = format!("{name}[{i}]");
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
