use super::{Graph, ParamId, ParamStore, TensorError, Var};

/// Worst coordinate found by [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)` over all coordinates at once.
    pub vector_rel_error: f64,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` must rebuild its graph deterministically from the store (dropout
/// off or seed pinned). The error at a coordinate is
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`; the report
/// also carries the scale-free error of the whole gradient vector.
pub fn finite_difference_check<F, E>(f: F, params: &mut ParamStore, eps: f64) -> Result<GradCheckReport, E>
where
    F: for<'p> Fn(&mut Graph<'p>) -> Result<Var, E>,
    E: From<TensorError>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            msg: format!("eps must be positive, got {eps}"),
        }
        .into());
    }
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(TensorError::NonFinite(v).into());
        }
        Ok(v)
    };

    let grads = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(TensorError::NonFinite(v).into());
        }
        g.backward(loss)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        vector_rel_error: 0.0,
    };
    let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.tensor(id).requires_grad {
            continue;
        }
        let analytic = grads.param(id).cloned();
        let n = params.value(id).len();
        for k in 0..n {
            let orig = params.value(id).as_slice().expect("standard layout")[k];
            params.value_mut(id).as_slice_mut().expect("standard layout")[k] = orig + eps;
            let plus = eval(params);
            params.value_mut(id).as_slice_mut().expect("standard layout")[k] = orig - eps;
            let minus = eval(params);
            params.value_mut(id).as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic
                .as_ref()
                .map_or(0.0, |m| m.as_slice().expect("standard layout")[k]);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coordinates += 1;
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = err;
                report.worst_param = Some(params.name(id).to_string());
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    let scale = a_sq.max(n_sq).sqrt();
    if scale > 0.0 {
        report.vector_rel_error = diff_sq.sqrt() / scale;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn squared_norm_of_linear_map() {
        // f = ||W x||², analytic gradient wrt W is 2 (W x) xᵀ.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store.add("w", random(&mut rng, 4, 3));
        let x = store.add("x", random(&mut rng, 3, 1));
        let f = |g: &mut Graph<'_>| -> Result<Var, TensorError> {
            let (wv, xv) = (g.param(w), g.param(x));
            let y = g.matmul(wv, xv)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        };
        let report = finite_difference_check(f, &mut store, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.vector_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coordinates, 15);

        // cross-check the tape against the closed form 2·WᵀW x for x
        let wm = store.value(w).clone();
        let xm = store.value(x).clone();
        let expected = wm.t().dot(&wm).dot(&xm) * 2.0;
        let mut g = Graph::new(&store);
        let loss = f(&mut g).unwrap();
        let grads = g.backward(loss).unwrap();
        let got = grads.param(x).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::ones((2, 2)));
        let report = finite_difference_check(
            |g: &mut Graph<'_>| -> Result<Var, TensorError> { Ok(g.constant(Matrix::ones((1, 1)))) },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::ones((1, 1)));
        let err = finite_difference_check(
            |g: &mut Graph<'_>| -> Result<Var, TensorError> {
                Ok(g.constant(Matrix::from_elem((1, 1), f64::NAN)))
            },
            &mut store,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonFinite(_)));
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut store = ParamStore::new();
        let res = finite_difference_check(
            |g: &mut Graph<'_>| -> Result<Var, TensorError> { Ok(g.constant(Matrix::ones((1, 1)))) },
            &mut store,
            0.0,
        );
        assert!(res.is_err());
    }
}
