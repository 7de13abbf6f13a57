use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::scalar::{lit, Scalar};

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    /// Number of input elements compared.
    pub checked: usize,
}

/// Relative error `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Checks `backward` of the scalar function `f` at the given inputs.
///
/// `f` receives one graph variable per input and must return a scalar.
/// Failures are reported through `pass`, not as errors; errors only come
/// from `f` itself.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<T>> = vars.iter().map(|v| g.grad(*v).expect("param has grad").to_vec()).collect();

    let eval = |probe: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0].to_f64().unwrap())
    };

    let mut probe = inputs.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + lit(eps);
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - lit(eps);
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[i][j].to_f64().unwrap(), numeric);
            if err.is_nan() {
                max_rel_error = f64::INFINITY;
            } else {
                max_rel_error = max_rel_error.max(err);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error, pass: max_rel_error < tol, checked })
}

/// Samples inputs of the given shapes uniformly in `[-1, 1)` and runs [`grad_check`].
pub fn grad_check_random<T, F>(f: F, shapes: &[Vec<usize>], seed: u64, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<T>> =
        shapes.iter().map(|s| Tensor::from_fn(s.clone(), |_| lit(rng.random_range(-1.0..1.0)))).collect();
    grad_check(f, &inputs, eps, tol)
}

type CaseFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// One differentiable primitive wired into a scalar loss for checking.
#[derive(Clone)]
pub struct PrimitiveCase {
    pub name: &'static str,
    shapes: Vec<Vec<usize>>,
    f: CaseFn,
}

impl std::fmt::Debug for PrimitiveCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrimitiveCase").field("name", &self.name).field("shapes", &self.shapes).finish()
    }
}

impl PrimitiveCase {
    /// Seeded inputs in `[-1, 1]` whose values are pairwise at least `1 / n`
    /// apart and at least `1 / (2n)` from zero, so central differences never
    /// straddle a ReLU kink or a max-pool tie.
    pub fn inputs(&self, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.shapes
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let n_even = n + n % 2;
                let step = 2.0 / n_even as f64;
                let mut values: Vec<f64> =
                    (0..n_even).map(|k| -1.0 + (k as f64 + 0.5) * step + rng.random_range(-0.2..0.2) * step).collect();
                values.shuffle(&mut rng);
                values.truncate(n);
                Tensor::new(shape.clone(), values).expect("shape matches")
            })
            .collect()
    }

    pub fn check(&self, seed: u64, eps: f64, tol: f64) -> Result<GradCheckReport> {
        grad_check(self.f, &self.inputs(seed), eps, tol)
    }
}

/// Squared error against a fixed, non-trivial target.
fn probe_loss(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let target = g.constant(Tensor::from_fn(shape, |i| 0.3 * (i as f64 * 0.7).sin()));
    g.mse(y, target)
}

/// Every tape primitive, each as a small scalar-valued function.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    fn case(name: &'static str, shapes: &[&[usize]], f: CaseFn) -> PrimitiveCase {
        PrimitiveCase { name, shapes: shapes.iter().map(|s| s.to_vec()).collect(), f }
    }
    vec![
        case("conv2d", &[&[2, 2, 5, 5], &[3, 2, 3, 3]], |g, v| {
            let y = g.conv2d(v[0], v[1], 1, 1)?;
            probe_loss(g, y)
        }),
        case("conv2d_strided", &[&[1, 2, 6, 6], &[2, 2, 3, 3]], |g, v| {
            let y = g.conv2d(v[0], v[1], 2, 0)?;
            probe_loss(g, y)
        }),
        case("channel_bias", &[&[2, 3, 2, 2], &[3]], |g, v| {
            let y = g.channel_bias(v[0], v[1])?;
            probe_loss(g, y)
        }),
        case("relu", &[&[2, 3, 3, 3]], |g, v| {
            let y = g.relu(v[0])?;
            probe_loss(g, y)
        }),
        case("maxpool2d", &[&[2, 2, 4, 4]], |g, v| {
            let y = g.maxpool2d(v[0], 2, 2, 0)?;
            probe_loss(g, y)
        }),
        case("maxpool2d_padded", &[&[1, 2, 4, 4]], |g, v| {
            let y = g.maxpool2d(v[0], 3, 1, 1)?;
            probe_loss(g, y)
        }),
        case("dense", &[&[3, 5], &[4, 5], &[4]], |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            probe_loss(g, y)
        }),
        case("add", &[&[2, 3, 2, 2], &[2, 3, 2, 2]], |g, v| {
            let y = g.add(v[0], v[1])?;
            probe_loss(g, y)
        }),
        case("concat_channels", &[&[2, 1, 3, 3], &[2, 2, 3, 3]], |g, v| {
            let y = g.concat_channels(&[v[0], v[1]])?;
            probe_loss(g, y)
        }),
        case("slice_channels", &[&[2, 4, 2, 2]], |g, v| {
            let y = g.slice_channels(v[0], 1, 2)?;
            probe_loss(g, y)
        }),
        case("global_avg_pool", &[&[2, 3, 3, 3]], |g, v| {
            let y = g.global_avg_pool(v[0])?;
            probe_loss(g, y)
        }),
        case("reshape", &[&[2, 3, 4]], |g, v| {
            let y = g.reshape(v[0], vec![4, 6])?;
            probe_loss(g, y)
        }),
        case("flatten", &[&[2, 2, 3, 2]], |g, v| {
            let y = g.flatten(v[0])?;
            probe_loss(g, y)
        }),
        case("softmax_cross_entropy", &[&[4, 4]], |g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1, 3])),
        case("mse", &[&[3, 2], &[3, 2]], |g, v| g.mse(v[0], v[1])),
    ]
}
