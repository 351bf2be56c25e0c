//! Pairwise scores between points (samples and proxies) and the backward
//! pass from per-pair upstream gradients to the embedding vectors.

use crate::metric::{BetaForm, Metric, PairScore};
use crate::types::{diff_norm, dot, norm, sum_norm, MetricParams};

/// How a pair of semantic vectors is compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Form {
    /// Metric distance on the raw semantic vectors.
    Distance,
    /// Metric distance on L2-normalized semantic vectors.
    UnitDistance,
    /// Metric similarity built on cosine similarity.
    Cosine,
}

impl Form {
    fn normalized(self) -> bool {
        !matches!(self, Form::Distance)
    }
}

/// Borrowed view of a set of points with cached normalizations.
pub(crate) struct Points<'a> {
    s: Vec<&'a [f64]>,
    u: Vec<&'a [f64]>,
    s_hat: Vec<Vec<f64>>,
    s_norm: Vec<f64>,
    u_norm: Vec<f64>,
}

impl<'a> Points<'a> {
    pub(crate) fn new(s: Vec<&'a [f64]>, u: Vec<&'a [f64]>, alpha_min: f64) -> Self {
        let s_norm: Vec<f64> = s.iter().map(|v| norm(v).max(alpha_min)).collect();
        let s_hat = s
            .iter()
            .zip(&s_norm)
            .map(|(v, n)| v.iter().map(|x| x / n).collect())
            .collect();
        let u_norm = u.iter().map(|v| norm(v)).collect();
        Points {
            s,
            u,
            s_hat,
            s_norm,
            u_norm,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.s.len()
    }

    fn semantic(&self, i: usize, form: Form) -> &[f64] {
        if form.normalized() {
            &self.s_hat[i]
        } else {
            self.s[i]
        }
    }
}

/// A scored pair with the intermediate quantities the backward pass needs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PairEval {
    pub(crate) score: PairScore,
    pub(crate) alpha: f64,
    pub(crate) beta: f64,
}

impl PairEval {
    pub(crate) fn value(&self) -> f64 {
        self.score.value
    }
}

/// Metric, parameters and comparison form used for every pair of one loss.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Scorer {
    pub(crate) metric: Metric,
    pub(crate) mp: MetricParams,
    pub(crate) form: Form,
}

impl Scorer {
    pub(crate) fn eval(&self, pts: &Points<'_>, i: usize, j: usize) -> PairEval {
        let (si, sj) = (pts.semantic(i, self.form), pts.semantic(j, self.form));
        let alpha = diff_norm(si, sj);
        let beta = if self.metric.uses_uncertainty() {
            match self.metric.beta_form() {
                BetaForm::SumThenNorm => sum_norm(pts.u[i], pts.u[j]),
                BetaForm::NormThenSum => pts.u_norm[i] + pts.u_norm[j],
            }
        } else {
            0.0
        };
        let score = match self.form {
            Form::Distance | Form::UnitDistance => self.metric.distance(alpha, beta, &self.mp),
            Form::Cosine => {
                let c = dot(si, sj).clamp(-1.0, 1.0);
                self.metric.similarity(c, alpha, beta, &self.mp)
            }
        };
        PairEval { score, alpha, beta }
    }

    /// Symmetric `n x n` table over the first `n` points; the diagonal is
    /// never scored.
    pub(crate) fn square_table(&self, pts: &Points<'_>, n: usize) -> Vec<Vec<PairEval>> {
        let empty = PairEval {
            score: PairScore::ZERO,
            alpha: 0.0,
            beta: 0.0,
        };
        let mut t = vec![vec![empty; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let e = self.eval(pts, i, j);
                t[i][j] = e;
                t[j][i] = e;
            }
        }
        t
    }
}

pub(crate) fn values(table: &[Vec<PairEval>]) -> Vec<Vec<f64>> {
    table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, e)| if i == j { 0.0 } else { e.value() })
                .collect()
        })
        .collect()
}

/// Gradient accumulator over the points of a [`Points`] set.
pub(crate) struct PointGrads {
    ds: Vec<Vec<f64>>,
    ds_hat: Vec<Vec<f64>>,
    du: Vec<Vec<f64>>,
}

impl PointGrads {
    pub(crate) fn zeros(pts: &Points<'_>) -> Self {
        PointGrads {
            ds: pts.s.iter().map(|v| vec![0.0; v.len()]).collect(),
            ds_hat: pts.s.iter().map(|v| vec![0.0; v.len()]).collect(),
            du: pts.u.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    /// Adds `upstream * d(pair value)/d(points)` for the pair `(i, j)`.
    pub(crate) fn add_pair(
        &mut self,
        pts: &Points<'_>,
        scorer: &Scorer,
        i: usize,
        j: usize,
        ev: &PairEval,
        upstream: f64,
    ) {
        if upstream == 0.0 {
            return;
        }
        let sc = &ev.score;
        let form = scorer.form;
        let (si, sj) = (pts.semantic(i, form), pts.semantic(j, form));
        let target = if form.normalized() {
            &mut self.ds_hat
        } else {
            &mut self.ds
        };
        let ga = upstream * sc.d_alpha;
        if ga != 0.0 && ev.alpha > 0.0 {
            let k = ga / ev.alpha;
            for d in 0..si.len() {
                let g = k * (si[d] - sj[d]);
                target[i][d] += g;
                target[j][d] -= g;
            }
        }
        let gc = upstream * sc.d_cos;
        if gc != 0.0 {
            for d in 0..si.len() {
                target[i][d] += gc * sj[d];
                target[j][d] += gc * si[d];
            }
        }
        let gb = upstream * sc.d_beta;
        if gb != 0.0 {
            match scorer.metric.beta_form() {
                BetaForm::SumThenNorm => {
                    if ev.beta > 0.0 {
                        let k = gb / ev.beta;
                        let (ui, uj) = (pts.u[i], pts.u[j]);
                        for d in 0..ui.len() {
                            let g = k * (ui[d] + uj[d]);
                            self.du[i][d] += g;
                            self.du[j][d] += g;
                        }
                    }
                }
                BetaForm::NormThenSum => {
                    for p in [i, j] {
                        let n = pts.u_norm[p];
                        if n > 0.0 {
                            let k = gb / n;
                            for (g, x) in self.du[p].iter_mut().zip(pts.u[p]) {
                                *g += k * x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Folds gradients on normalized vectors back onto the raw vectors and
    /// returns `(d/ds, d/du)` per point.
    pub(crate) fn finish(mut self, pts: &Points<'_>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        for p in 0..pts.len() {
            let gh = &self.ds_hat[p];
            if gh.iter().all(|g| *g == 0.0) {
                continue;
            }
            let sh = &pts.s_hat[p];
            let proj = dot(sh, gh);
            let inv = 1.0 / pts.s_norm[p];
            for d in 0..gh.len() {
                self.ds[p][d] += (gh[d] - sh[d] * proj) * inv;
            }
        }
        (self.ds, self.du)
    }
}

/// `log(sum exp(x))` and its gradient (softmax weights). Empty input gives
/// `-inf` and no weights.
pub(crate) fn log_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (m, vec![0.0; xs.len()]);
    }
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

/// `log(1 + sum exp(x))` and its gradient.
pub(crate) fn log1p_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let m = xs.iter().copied().fold(0.0, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = (-m).exp() + e.iter().sum::<f64>();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}
