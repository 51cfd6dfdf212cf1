//! Decision rules and bias measures.
//!
//! The classifier picks, for each image and concept pair, the prompt with the
//! smaller mean denoising loss. Association scores average those decisions
//! over images and pairs; differentials subtract two association scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label lists differ in length: {original} vs {edited}")]
    LengthMismatch { original: usize, edited: usize },
    #[error("no labels to compare")]
    Empty,
    #[error("decisions do not cover the cross product: {}", describe_cells(.missing, .duplicated, .unexpected))]
    IncompleteCrossProduct { missing: Vec<String>, duplicated: Vec<String>, unexpected: Vec<String> },
    #[error("loss lists must be non-empty and of equal length ({a} vs {b})")]
    SampleMismatch { a: usize, b: usize },
}

fn describe_cells(missing: &[String], duplicated: &[String], unexpected: &[String]) -> String {
    let show = |v: &[String]| {
        let head: Vec<&str> = v.iter().take(5).map(String::as_str).collect();
        let more = if v.len() > 5 { format!(" (+{} more)", v.len() - 5) } else { String::new() };
        format!("[{}]{more}", head.join(", "))
    };
    format!("missing {}, duplicated {}, unexpected {}", show(missing), show(duplicated), show(unexpected))
}

fn incomplete(missing: Vec<String>) -> MetricsError {
    MetricsError::IncompleteCrossProduct { missing, duplicated: vec![], unexpected: vec![] }
}

/// Fraction of positions where the two label lists disagree.
pub fn flip_rate<L: PartialEq, T: Scalar>(original: &[L], edited: &[L]) -> Result<T, MetricsError> {
    if original.len() != edited.len() {
        return Err(MetricsError::LengthMismatch { original: original.len(), edited: edited.len() });
    }
    if original.is_empty() {
        return Err(MetricsError::Empty);
    }
    let flips = original.iter().zip(edited).filter(|(o, e)| o != e).count();
    Ok(T::from_count(flips) / T::from_count(original.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    A,
    B,
}

/// Argmin over two mean losses; an exact tie goes to `a`.
#[inline]
pub fn decide<T: Scalar>(mean_loss_a: T, mean_loss_b: T) -> Choice {
    if mean_loss_a <= mean_loss_b {
        Choice::A
    } else {
        Choice::B
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDecision<T> {
    pub image_id: String,
    pub concept_a: String,
    pub concept_b: String,
    pub chosen: Choice,
    pub mean_loss_a: T,
    pub mean_loss_b: T,
    pub n_samples: u32,
}

impl<T: Scalar> PairwiseDecision<T> {
    /// Builds a decision from paired per-sample losses.
    pub fn from_losses(
        image_id: impl Into<String>,
        concept_a: impl Into<String>,
        concept_b: impl Into<String>,
        losses_a: &[T],
        losses_b: &[T],
    ) -> Result<Self, MetricsError> {
        if losses_a.is_empty() || losses_a.len() != losses_b.len() {
            return Err(MetricsError::SampleMismatch { a: losses_a.len(), b: losses_b.len() });
        }
        let n = T::from_count(losses_a.len());
        let mean_loss_a = losses_a.iter().copied().sum::<T>() / n;
        let mean_loss_b = losses_b.iter().copied().sum::<T>() / n;
        Ok(Self {
            image_id: image_id.into(),
            concept_a: concept_a.into(),
            concept_b: concept_b.into(),
            chosen: decide(mean_loss_a, mean_loss_b),
            mean_loss_a,
            mean_loss_b,
            n_samples: losses_a.len() as u32,
        })
    }

    /// Probability assigned to `a` under the chosen indicator.
    pub fn prob_a(&self, indicator: Indicator) -> T {
        match indicator {
            Indicator::Hard => {
                if self.chosen == Choice::A {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Indicator::Soft { temperature } => {
                let z = (self.mean_loss_a - self.mean_loss_b) / T::lit(temperature);
                T::one() / (T::one() + z.exp())
            }
        }
    }
}

/// How a decision contributes to an association score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Indicator {
    /// 1 when the classifier picked `a`, else 0.
    #[default]
    Hard,
    /// Softmax over negative mean losses. For sensitivity analysis only.
    Soft { temperature: f64 },
}

/// Checks that `decisions` hold every image x (a, b) cell exactly once and
/// returns the image ids in first-appearance order.
fn check_cross_product<T>(
    decisions: &[PairwiseDecision<T>],
    set_a: &[String],
    set_b: &[String],
) -> Result<Vec<String>, MetricsError> {
    if decisions.is_empty() {
        return Err(incomplete(vec!["<no decisions>".into()]));
    }
    let mut images: Vec<String> = Vec::new();
    let mut counts: HashMap<(&str, &str, &str), usize> = HashMap::new();
    let mut unexpected = Vec::new();
    for d in decisions {
        if !images.iter().any(|i| i == &d.image_id) {
            images.push(d.image_id.clone());
        }
        if !set_a.contains(&d.concept_a) || !set_b.contains(&d.concept_b) {
            unexpected.push(format!("{}:{}|{}", d.image_id, d.concept_a, d.concept_b));
            continue;
        }
        *counts.entry((d.image_id.as_str(), d.concept_a.as_str(), d.concept_b.as_str())).or_default() += 1;
    }
    let mut missing = Vec::new();
    let mut duplicated = Vec::new();
    for img in &images {
        for a in set_a {
            for b in set_b {
                match counts.get(&(img.as_str(), a.as_str(), b.as_str())) {
                    None => missing.push(format!("{img}:{a}|{b}")),
                    Some(1) => {}
                    Some(_) => duplicated.push(format!("{img}:{a}|{b}")),
                }
            }
        }
    }
    if missing.is_empty() && duplicated.is_empty() && unexpected.is_empty() {
        Ok(images)
    } else {
        Err(MetricsError::IncompleteCrossProduct { missing, duplicated, unexpected })
    }
}

/// Mean over images of the mean over `A x B` pairs of the rate at which `a`
/// is chosen.
pub fn association_score<T: Scalar>(
    decisions: &[PairwiseDecision<T>],
    set_a: &[String],
    set_b: &[String],
) -> Result<T, MetricsError> {
    association_score_with(decisions, set_a, set_b, Indicator::Hard)
}

pub fn association_score_with<T: Scalar>(
    decisions: &[PairwiseDecision<T>],
    set_a: &[String],
    set_b: &[String],
    indicator: Indicator,
) -> Result<T, MetricsError> {
    let images = check_cross_product(decisions, set_a, set_b)?;
    match indicator {
        // Every image has the same number of pairs, so the mean of means is
        // the overall rate; one integer division keeps it exact.
        Indicator::Hard => {
            let picked_a = decisions.iter().filter(|d| d.chosen == Choice::A).count();
            Ok(T::from_count(picked_a) / T::from_count(decisions.len()))
        }
        Indicator::Soft { .. } => {
            let mut per_image: BTreeMap<&str, T> = BTreeMap::new();
            for d in decisions {
                let acc = per_image.entry(d.image_id.as_str()).or_insert_with(T::zero);
                *acc = *acc + d.prob_a(indicator);
            }
            let pairs = T::from_count(set_a.len() * set_b.len());
            let total: T = per_image.values().map(|s| *s / pairs).sum();
            Ok(total / T::from_count(images.len()))
        }
    }
}

/// Association of one dataset minus another, in `[-1, 1]` for scores in `[0, 1]`.
pub fn differential_association<T: Scalar>(score_x: T, score_y: T) -> T {
    debug_assert!(score_x >= T::zero() && score_x <= T::one());
    debug_assert!(score_y >= T::zero() && score_y <= T::one());
    score_x - score_y
}

/// Rate at which `a` was picked for one concept pair across a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFraction<T> {
    pub identity_id: String,
    pub concept_a: String,
    pub concept_b: String,
    pub frac_a: T,
}

/// Groups decisions by pair and reports the share of `a` choices, pairs in
/// first-appearance order.
pub fn pair_fractions<T: Scalar>(identity_id: &str, decisions: &[PairwiseDecision<T>]) -> Vec<PairFraction<T>> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut tallies: HashMap<(&str, &str), (usize, usize)> = HashMap::new();
    for d in decisions {
        let key = (d.concept_a.as_str(), d.concept_b.as_str());
        let t = tallies.entry(key).or_insert_with(|| {
            order.push(key);
            (0, 0)
        });
        t.1 += 1;
        if d.chosen == Choice::A {
            t.0 += 1;
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (a, n) = tallies[&key];
            PairFraction {
                identity_id: identity_id.to_string(),
                concept_a: key.0.to_string(),
                concept_b: key.1.to_string(),
                frac_a: T::from_count(a) / T::from_count(n),
            }
        })
        .collect()
}

/// Fraction above which (or below one minus which) a comparison counts as
/// one-sided.
pub const SIGNIFICANCE_THRESHOLD: f64 = 0.75;

/// Keeps comparisons where one concept won strictly more than 75% of the time.
pub fn significant_comparisons<T: Scalar>(rows: &[PairFraction<T>]) -> Vec<PairFraction<T>> {
    let hi = T::lit(SIGNIFICANCE_THRESHOLD);
    let lo = T::lit(1.0 - SIGNIFICANCE_THRESHOLD);
    rows.iter().filter(|r| r.frac_a > hi || r.frac_a < lo).cloned().collect()
}

/// Share of decisions that agree with the ground truth. Decisions whose image
/// has no ground truth entry are ignored; if none remain, the cross product
/// is reported as incomplete.
pub fn gender_accuracy<T: Scalar>(
    decisions: &[PairwiseDecision<T>],
    truth: &BTreeMap<String, Choice>,
) -> Result<T, MetricsError> {
    let mut judged = 0usize;
    let mut correct = 0usize;
    for d in decisions {
        if let Some(expected) = truth.get(&d.image_id) {
            judged += 1;
            if *expected == d.chosen {
                correct += 1;
            }
        }
    }
    if judged == 0 {
        let missing = truth.keys().cloned().collect();
        return Err(incomplete(missing));
    }
    Ok(T::from_count(correct) / T::from_count(judged))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(image: &str, a: &str, b: &str, chosen: Choice) -> PairwiseDecision<f64> {
        let (la, lb) = if chosen == Choice::A { (0.1, 0.2) } else { (0.2, 0.1) };
        PairwiseDecision::from_losses(image, a, b, &[la], &[lb]).unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn flip_rate_examples() {
        let orig = vec!["f"; 50];
        let mut edited = vec!["f"; 50];
        for e in edited.iter_mut().take(38) {
            *e = "m";
        }
        assert_eq!(flip_rate::<_, f64>(&orig, &edited).unwrap(), 0.76);
        assert_eq!(flip_rate::<_, f64>(&orig, &orig).unwrap(), 0.0);
        assert_eq!(flip_rate::<_, f64>(&["a", "b"], &["b", "a"]).unwrap(), 1.0);
        assert!(matches!(flip_rate::<_, f64>(&["a"], &["a", "b"]), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(flip_rate::<&str, f64>(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn argmin_and_tie() {
        assert_eq!(decide(0.4, 0.7), Choice::A);
        assert_eq!(decide(0.7, 0.4), Choice::B);
        assert_eq!(decide(0.5, 0.5), Choice::A);
        let p = PairwiseDecision::from_losses("i", "a", "b", &[0.3, 0.5], &[0.4, 0.4]).unwrap();
        assert_eq!(p.chosen, Choice::A);
        assert_eq!(p.n_samples, 2);
        assert!(PairwiseDecision::<f64>::from_losses("i", "a", "b", &[0.3], &[]).is_err());
    }

    #[test]
    fn association_all_a_and_half() {
        let (a, b) = (s(&["x", "y"]), s(&["p"]));
        let all = vec![d("1", "x", "p", Choice::A), d("1", "y", "p", Choice::A)];
        assert_eq!(association_score(&all, &a, &b).unwrap(), 1.0);
        let half = vec![
            d("1", "x", "p", Choice::A),
            d("1", "y", "p", Choice::B),
            d("2", "x", "p", Choice::B),
            d("2", "y", "p", Choice::A),
        ];
        assert_eq!(association_score(&half, &a, &b).unwrap(), 0.5);
    }

    #[test]
    fn association_reports_missing_cells() {
        let (a, b) = (s(&["x", "y"]), s(&["p"]));
        let partial = vec![d("1", "x", "p", Choice::A)];
        match association_score(&partial, &a, &b).unwrap_err() {
            MetricsError::IncompleteCrossProduct { missing, .. } => assert_eq!(missing, vec!["1:y|p"]),
            e => panic!("{e:?}"),
        }
        let dup = vec![d("1", "x", "p", Choice::A), d("1", "x", "p", Choice::A), d("1", "y", "p", Choice::A)];
        assert!(association_score(&dup, &a, &b).is_err());
        let empty: Vec<PairwiseDecision<f64>> = vec![];
        assert!(association_score(&empty, &a, &b).is_err());
    }

    #[test]
    fn soft_indicator_is_half_on_ties() {
        let p = PairwiseDecision::from_losses("i", "a", "b", &[0.2], &[0.2]).unwrap();
        assert_eq!(p.prob_a(Indicator::Soft { temperature: 1.0 }), 0.5);
        let a = s(&["a"]);
        let b = s(&["b"]);
        let v = association_score_with(&[p], &a, &b, Indicator::Soft { temperature: 0.1 }).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn differentials() {
        assert!((differential_association::<f64>((0.51 + 0.58) / 2.0, (0.10 + 0.27) / 2.0) - 0.36).abs() < 1e-12);
        assert!((differential_association::<f64>((0.67 + 0.59) / 2.0, (0.39 + 0.43) / 2.0) - 0.22).abs() < 1e-12);
        assert_eq!(differential_association(0.4, 0.4), 0.0);
    }

    #[test]
    fn significance_boundaries() {
        let row =
            |f: f64| PairFraction { identity_id: "x".into(), concept_a: "a".into(), concept_b: "b".into(), frac_a: f };
        let kept = significant_comparisons(&[row(0.77), row(0.75), row(0.24), row(0.25), row(0.5)]);
        let fr: Vec<f64> = kept.iter().map(|r| r.frac_a).collect();
        assert_eq!(fr, vec![0.77, 0.24]);
    }

    #[test]
    fn accuracy_replay() {
        let mut decisions = Vec::new();
        let mut truth = BTreeMap::new();
        for i in 0..25 {
            let id = format!("img{i}");
            truth.insert(id.clone(), Choice::B);
            decisions.push(d(&id, "man", "woman", if i < 13 { Choice::B } else { Choice::A }));
        }
        assert_eq!(gender_accuracy::<f64>(&decisions, &truth).unwrap(), 0.52);
        let other: BTreeMap<String, Choice> = [("zzz".to_string(), Choice::A)].into();
        assert!(matches!(gender_accuracy(&decisions, &other), Err(MetricsError::IncompleteCrossProduct { .. })));
    }

    #[test]
    fn pair_fraction_grouping() {
        let v = vec![
            d("1", "x", "p", Choice::A),
            d("2", "x", "p", Choice::B),
            d("1", "y", "p", Choice::A),
            d("2", "y", "p", Choice::A),
        ];
        let f = pair_fractions("id", &v);
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].concept_a.as_str(), f[0].frac_a), ("x", 0.5));
        assert_eq!((f[1].concept_a.as_str(), f[1].frac_a), ("y", 1.0));
    }
}
