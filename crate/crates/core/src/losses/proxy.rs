//! Proxy-based losses: softmax over proxy similarities, ProxyNCA and
//! ProxyAnchor.

use crate::error::{IdmlError, Result};

use super::pairs::{log1p_sum_exp, log_sum_exp, PointGrads, Points};
use super::{LossInput, LossValue, Objective, PairTerm, ProxySet};

fn proxies<'a>(input: &LossInput<'a>) -> Result<&'a ProxySet> {
    input.proxies.ok_or_else(|| IdmlError::param("proxy loss requires a proxy set"))
}

/// Samples that act as anchors.
fn anchors(obj: &Objective, input: &LossInput<'_>) -> Vec<usize> {
    (0..input.embeddings.len())
        .filter(|&i| obj.mixed_proxy_anchors || !input.is_mixed(i))
        .collect()
}

/// Positive and negative proxy indices for sample `i`.
fn split_proxies(input: &LossInput<'_>, set: &ProxySet, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let labels = &input.labels[i];
    for &l in labels.labels() {
        if set.index_of(l).is_none() {
            return Err(IdmlError::param(format!("no proxy for class {l} of sample {i}")));
        }
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&p| labels.contains(set.classes()[p]));
    if neg.is_empty() {
        return Err(IdmlError::param(format!("sample {i} has no negative proxy")));
    }
    Ok((pos, neg))
}

/// Shared body of the softmax and ProxyNCA losses:
/// `scale * sum_i (LSE_neg(sign * v) - LSE_pos(sign * v))`.
fn ratio_loss(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    grads: &mut PointGrads,
    sign: f64,
    mean: bool,
) -> Result<LossValue> {
    let set = proxies(input)?;
    let n = input.embeddings.len();
    let scorer = obj.scorer();
    let used = anchors(obj, input);
    let scale = if mean && !used.is_empty() { 1.0 / used.len() as f64 } else { 1.0 };
    let mut terms = Vec::with_capacity(used.len());
    for i in used {
        let (pos, neg) = split_proxies(input, set, i)?;
        let evs_pos: Vec<_> = pos.iter().map(|&p| scorer.eval(pts, i, n + p)).collect();
        let evs_neg: Vec<_> = neg.iter().map(|&p| scorer.eval(pts, i, n + p)).collect();
        let xp: Vec<f64> = evs_pos.iter().map(|e| sign * e.value()).collect();
        let xn: Vec<f64> = evs_neg.iter().map(|e| sign * e.value()).collect();
        let (lse_p, wp) = log_sum_exp(&xp);
        let (lse_n, wn) = log_sum_exp(&xn);
        for ((&p, ev), w) in pos.iter().zip(&evs_pos).zip(wp) {
            grads.add_pair(pts, &scorer, i, n + p, ev, -sign * w * scale);
        }
        for ((&p, ev), w) in neg.iter().zip(&evs_neg).zip(wn) {
            grads.add_pair(pts, &scorer, i, n + p, ev, sign * w * scale);
        }
        terms.push(PairTerm {
            i,
            j: None,
            value: (lse_n - lse_p) * scale,
        });
    }
    Ok(LossValue::from_terms(terms, f64::INFINITY))
}

/// `(1/N) sum_i -log(sum_pos e^C / sum_neg e^C)`.
pub(super) fn softmax(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    ratio_loss(obj, input, pts, grads, 1.0, true)
}

/// `sum_i -log(sum_pos e^-D / sum_neg e^-D)`.
pub(super) fn proxy_nca(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    ratio_loss(obj, input, pts, grads, -1.0, false)
}

/// Per-proxy terms; `PairTerm::i` is the proxy index. Positive terms are
/// averaged over proxies with at least one positive sample, negative terms
/// over all proxies.
pub(super) fn proxy_anchor(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    let set = proxies(input)?;
    let n = input.embeddings.len();
    let scorer = obj.scorer();
    let (alpha, delta) = (obj.loss_params.pa_alpha, obj.loss_params.pa_delta);
    let used = anchors(obj, input);
    let members: Vec<(Vec<usize>, Vec<usize>)> = (0..set.len())
        .map(|p| {
            let class = set.classes()[p];
            used.iter().partition(|&&i| input.labels[i].contains(class))
        })
        .collect();
    let with_pos = members.iter().filter(|(pos, _)| !pos.is_empty()).count();
    let pos_scale = if with_pos == 0 { 0.0 } else { 1.0 / with_pos as f64 };
    let neg_scale = 1.0 / set.len() as f64;
    let mut terms = Vec::with_capacity(set.len());
    for (p, (pos, neg)) in members.iter().enumerate() {
        let evs_pos: Vec<_> = pos.iter().map(|&i| scorer.eval(pts, i, n + p)).collect();
        let evs_neg: Vec<_> = neg.iter().map(|&i| scorer.eval(pts, i, n + p)).collect();
        let xp: Vec<f64> = evs_pos.iter().map(|e| -alpha * (e.value() - delta)).collect();
        let xn: Vec<f64> = evs_neg.iter().map(|e| alpha * (e.value() + delta)).collect();
        let (lp_pos, wp) = log1p_sum_exp(&xp);
        let (lp_neg, wn) = log1p_sum_exp(&xn);
        for ((&i, ev), w) in pos.iter().zip(&evs_pos).zip(wp) {
            grads.add_pair(pts, &scorer, i, n + p, ev, -alpha * w * pos_scale);
        }
        for ((&i, ev), w) in neg.iter().zip(&evs_neg).zip(wn) {
            grads.add_pair(pts, &scorer, i, n + p, ev, alpha * w * neg_scale);
        }
        terms.push(PairTerm {
            i: p,
            j: None,
            value: lp_pos * pos_scale + lp_neg * neg_scale,
        });
    }
    Ok(LossValue::from_terms(terms, f64::INFINITY))
}

#[cfg(test)]
mod tests {
    use crate::losses::*;
    use crate::types::{EmbeddingPair, LabelSet, MetricParams};
    use crate::{IdmlError, Metric, Result};

    fn unit(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }

    fn emb(s: Vec<f64>) -> EmbeddingPair {
        EmbeddingPair::from_slices(&s, &[0.0]).unwrap()
    }

    fn set(classes: Vec<u32>, s: Vec<Vec<f64>>) -> ProxySet {
        let u = vec![vec![0.0]; s.len()];
        ProxySet::new(classes, s, u).unwrap()
    }

    fn run(kind: LossKind, e: &[EmbeddingPair], labels: &[LabelSet], p: &ProxySet) -> Result<LossOutput> {
        Objective::new(kind, Metric::Euclidean).evaluate(&LossInput::new(e, labels).with_proxies(p), &Mining::All)
    }

    #[test]
    fn softmax_examples() {
        let labels = [LabelSet::single(0)];
        // equal similarity to both proxies
        let p = set(vec![0, 1], vec![unit(0.7), unit(-0.7)]);
        let v = run(LossKind::Softmax, &[emb(unit(0.0))], &labels, &p).unwrap();
        assert!(v.value.value.abs() < 1e-15);

        let p = set(vec![0, 1], vec![unit(0.0), unit(std::f64::consts::PI)]);
        let v = run(LossKind::Softmax, &[emb(unit(0.0))], &labels, &p).unwrap();
        assert!((v.value.value + 2.0).abs() < 1e-12);

        let p = set(vec![0, 1, 2], vec![unit(0.4), unit(-0.4), unit(0.4)]);
        let e = [emb(vec![1.0, 0.0])];
        let labels = [LabelSet::single(1)];
        let v = run(LossKind::Softmax, &e, &labels, &p).unwrap();
        assert!((v.value.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_errors() {
        let p = set(vec![0], vec![unit(0.0)]);
        let labels = [LabelSet::single(0)];
        assert!(matches!(
            run(LossKind::Softmax, &[emb(unit(0.0))], &labels, &p),
            Err(IdmlError::Param(_))
        ));
        let p = set(vec![0, 1], vec![unit(0.0), unit(1.0)]);
        let labels = [LabelSet::single(7)];
        assert!(run(LossKind::Softmax, &[emb(unit(0.0))], &labels, &p).is_err());
        let e = [emb(unit(0.0))];
        let labels = [LabelSet::single(0)];
        let no_proxies = Objective::new(LossKind::Softmax, Metric::Ism).evaluate(&LossInput::new(&e, &labels), &Mining::All);
        assert!(no_proxies.is_err());
    }

    #[test]
    fn proxy_nca_examples() {
        let labels = [LabelSet::single(0)];
        let p = set(vec![0, 1], vec![unit(0.5), unit(-0.5)]);
        let v = run(LossKind::ProxyNca, &[emb(unit(0.0))], &labels, &p).unwrap();
        assert!(v.value.value.abs() < 1e-15);

        // negative proxy at unit chord distance
        let p = set(vec![0, 1], vec![unit(0.0), unit(std::f64::consts::FRAC_PI_3)]);
        let v = run(LossKind::ProxyNca, &[emb(unit(0.0))], &labels, &p).unwrap();
        assert!((v.value.value + 1.0).abs() < 1e-12);

        let p = set(vec![0, 1, 2], vec![unit(1.0), unit(-1.0), unit(1.0)]);
        let v = run(LossKind::ProxyNca, &[emb(unit(0.0))], &labels, &p).unwrap();
        assert!((v.value.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn proxy_anchor_examples() {
        let lp = LossParams::default();
        // single proxy, single matching sample at cosine delta
        let p = set(vec![0], vec![unit(lp.pa_delta.acos())]);
        let labels = [LabelSet::single(0)];
        let v = run(LossKind::ProxyAnchor, &[emb(unit(0.0))], &labels, &p).unwrap();
        assert!((v.value.value - std::f64::consts::LN_2).abs() < 1e-12);

        let p = set(vec![0], vec![unit(0.0)]);
        let v = run(LossKind::ProxyAnchor, &[], &[], &p).unwrap();
        assert_eq!(v.value.value, 0.0);

        let mut big = lp;
        big.pa_alpha = 1e4;
        let obj = Objective::new(LossKind::ProxyAnchor, Metric::Euclidean).with_params(MetricParams::default(), big);
        let e = [emb(unit(0.0))];
        let v = obj
            .evaluate(&LossInput::new(&e, &labels).with_proxies(&set(vec![0], vec![unit(0.1)])), &Mining::All)
            .unwrap();
        assert!(v.value.value < 1e-300);
    }

    #[test]
    fn proxy_anchor_rejects_empty_set() {
        let p = ProxySet::new(vec![], vec![], vec![]).unwrap();
        let e = [emb(unit(0.0))];
        let labels = [LabelSet::single(0)];
        assert!(run(LossKind::ProxyAnchor, &e, &labels, &p).is_err());
    }

    #[test]
    fn mixed_anchors_can_be_excluded() {
        let p = set(vec![0, 1, 2], vec![unit(0.0), unit(2.0), unit(4.0)]);
        let e = [emb(unit(0.3)), emb(unit(1.0))];
        let labels = [LabelSet::single(0), LabelSet::new(vec![0, 1]).unwrap()];
        let mixed = [false, true];
        for kind in [LossKind::Softmax, LossKind::ProxyNca, LossKind::ProxyAnchor] {
            let mut obj = Objective::new(kind, Metric::Ism);
            obj.mixed_proxy_anchors = false;
            let with_mixed = obj
                .evaluate(&LossInput::new(&e, &labels).with_proxies(&p).with_mixed(&mixed), &Mining::All)
                .unwrap();
            let alone = obj
                .evaluate(&LossInput::new(&e[..1], &labels[..1]).with_proxies(&p), &Mining::All)
                .unwrap();
            assert_eq!(with_mixed.value.value, alone.value.value, "{kind}");
            assert!(with_mixed.grads.semantic[1].iter().all(|g| *g == 0.0));
        }
    }
}
