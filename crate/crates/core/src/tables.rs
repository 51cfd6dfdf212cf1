//! Result tables and the figure-level aggregates derived from them.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{Gender, RunManifest};
use crate::scalar::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    HighPaid,
    LowPaid,
}

impl Tier {
    pub const ALL: [Tier; 2] = [Tier::HighPaid, Tier::LowPaid];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::HighPaid => "high_paid",
            Tier::LowPaid => "low_paid",
        }
    }

    pub fn professions(self, manifest: &RunManifest) -> &[String] {
        match self {
            Tier::HighPaid => &manifest.edit_tiers.high_paid,
            Tier::LowPaid => &manifest.edit_tiers.low_paid,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (identity, tier, strength) cell of the edit audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAuditRow {
    pub dataset: String,
    pub identity_id: String,
    pub tier: Tier,
    pub strength: f64,
    /// Share of edits whose gender label differs from the original's.
    pub flip_rate: f64,
    /// ITA of the edited average face minus that of the original one.
    pub delta_ita: f64,
    pub n_edits: u32,
    pub original_ita: f64,
    pub edited_ita: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRow {
    pub dataset: String,
    pub identity_id: String,
    pub n_samples: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialRow {
    pub dataset: String,
    pub n_samples: u32,
    /// Mean male-identity score minus mean female-identity score.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssociationTable {
    pub rows: Vec<AssociationRow>,
    pub differentials: Vec<DifferentialRow>,
}

impl AssociationTable {
    /// Fills in per-dataset differentials from the score rows. Datasets
    /// lacking either gender get no differential.
    pub fn from_rows(rows: Vec<AssociationRow>, manifest: &RunManifest) -> Self {
        let mut differentials = Vec::new();
        for dataset in manifest.datasets() {
            for &n in &manifest.elbo_sample_counts {
                let by_gender = |g: Gender| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.dataset == dataset && r.n_samples == n)
                        .filter(|r| manifest.identity(&r.identity_id).is_some_and(|i| i.group_axes.gender_label == g))
                        .map(|r| r.score)
                        .collect();
                    mean(&v)
                };
                if let (Some(m), Some(f)) = (by_gender(Gender::Male), by_gender(Gender::Female)) {
                    differentials.push(DifferentialRow {
                        dataset: dataset.clone(),
                        n_samples: n,
                        value: crate::metrics::differential_association(m, f),
                    });
                }
            }
        }
        AssociationTable { rows, differentials }
    }

    pub fn score(&self, identity_id: &str, n_samples: u32) -> Option<f64> {
        self.rows.iter().find(|r| r.identity_id == identity_id && r.n_samples == n_samples).map(|r| r.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub identity_id: String,
    pub n_samples: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthValue {
    pub strength: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRate {
    pub n_samples: u32,
    pub female: Option<f64>,
    pub male: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregates {
    pub dataset: String,
    pub female_flip_high_paid: Vec<StrengthValue>,
    pub male_flip_high_paid: Vec<StrengthValue>,
    pub mean_delta_ita_overall: Option<f64>,
    pub mean_delta_ita_nonwhite: Option<f64>,
    /// Rate of choosing the `set_a` concept, by gender, per sample count.
    pub male_dominated_choice_rate_by_samples: Vec<ChoiceRate>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub datasets: Vec<DatasetAggregates>,
    /// Same rates pooled over every dataset.
    pub overall_choice_rate: Vec<ChoiceRate>,
}

impl Aggregates {
    pub fn dataset(&self, name: &str) -> Option<&DatasetAggregates> {
        self.datasets.iter().find(|d| d.dataset == name)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("tables are missing rows: {}", .0.join(", "))]
    MissingRows(Vec<String>),
}

fn check_complete(
    manifest: &RunManifest,
    table1: &[EditAuditRow],
    table2: &AssociationTable,
) -> Result<(), AggregateError> {
    let mut missing = Vec::new();
    if !table1.is_empty() {
        for ident in &manifest.identities {
            for tier in Tier::ALL {
                for &s in &manifest.edit_strengths {
                    let found = table1.iter().any(|r| r.identity_id == ident.id && r.tier == tier && r.strength == s);
                    if !found {
                        missing.push(format!("edit {}/{}/{s}", ident.id, tier));
                    }
                }
            }
        }
    }
    if !table2.rows.is_empty() {
        for ident in &manifest.identities {
            for &n in &manifest.elbo_sample_counts {
                if table2.score(&ident.id, n).is_none() {
                    missing.push(format!("association {}/{n}", ident.id));
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(AggregateError::MissingRows(missing))
    }
}

/// Unweighted means over the relevant rows of each table, per dataset.
///
/// An empty table is treated as "not run" and contributes no aggregates; a
/// partially filled one is an error.
pub fn build_aggregates(
    manifest: &RunManifest,
    table1: &[EditAuditRow],
    table2: &AssociationTable,
) -> Result<Aggregates, AggregateError> {
    check_complete(manifest, table1, table2)?;
    let gender_of = |id: &str| manifest.identity(id).map(|i| i.group_axes.gender_label);
    let non_white = |id: &str| manifest.identity(id).is_some_and(|i| !manifest.is_reference_race(i));

    let flip_means = |dataset: &str, g: Gender| -> Vec<StrengthValue> {
        manifest
            .edit_strengths
            .iter()
            .filter_map(|&s| {
                let v: Vec<f64> = table1
                    .iter()
                    .filter(|r| r.dataset == dataset && r.tier == Tier::HighPaid && r.strength == s)
                    .filter(|r| gender_of(&r.identity_id) == Some(g))
                    .map(|r| r.flip_rate)
                    .collect();
                mean(&v).map(|value| StrengthValue { strength: s, value })
            })
            .collect()
    };
    let choice_rates = |dataset: Option<&str>| -> Vec<ChoiceRate> {
        manifest
            .elbo_sample_counts
            .iter()
            .filter_map(|&n| {
                let pick = |g: Gender| {
                    let v: Vec<f64> = table2
                        .rows
                        .iter()
                        .filter(|r| r.n_samples == n && dataset.is_none_or(|d| r.dataset == d))
                        .filter(|r| gender_of(&r.identity_id) == Some(g))
                        .map(|r| r.score)
                        .collect();
                    mean(&v)
                };
                let (female, male) = (pick(Gender::Female), pick(Gender::Male));
                (female.is_some() || male.is_some()).then_some(ChoiceRate { n_samples: n, female, male })
            })
            .collect()
    };

    let datasets = manifest
        .datasets()
        .into_iter()
        .map(|dataset| {
            let deltas: Vec<f64> = table1.iter().filter(|r| r.dataset == dataset).map(|r| r.delta_ita).collect();
            let nw: Vec<f64> = table1
                .iter()
                .filter(|r| r.dataset == dataset && non_white(&r.identity_id))
                .map(|r| r.delta_ita)
                .collect();
            DatasetAggregates {
                female_flip_high_paid: flip_means(&dataset, Gender::Female),
                male_flip_high_paid: flip_means(&dataset, Gender::Male),
                mean_delta_ita_overall: mean(&deltas),
                mean_delta_ita_nonwhite: mean(&nw),
                male_dominated_choice_rate_by_samples: choice_rates(Some(&dataset)),
                dataset,
            }
        })
        .collect();
    Ok(Aggregates { datasets, overall_choice_rate: choice_rates(None) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest::from_json(
            br#"{
            "identities": [
              {"id": "f", "display_name": "F", "attribute_terms": ["woman"], "group_axes": {"gender_label": "female", "race_label": "black"}},
              {"id": "m", "display_name": "M", "attribute_terms": ["man"], "group_axes": {"gender_label": "male", "race_label": "white"}}
            ],
            "concepts": {"set_a": ["carpenter"], "set_b": ["nurse"]},
            "edit_strengths": [1.0],
            "elbo_sample_counts": [1]
        }"#,
        )
        .unwrap()
    }

    fn row(id: &str, tier: Tier, flip: f64, delta: f64) -> EditAuditRow {
        EditAuditRow {
            dataset: "synthetic".into(),
            identity_id: id.into(),
            tier,
            strength: 1.0,
            flip_rate: flip,
            delta_ita: delta,
            n_edits: 50,
            original_ita: 0.0,
            edited_ita: delta,
        }
    }

    #[test]
    fn aggregates_from_small_tables() {
        let m = manifest();
        let t1 = vec![
            row("f", Tier::HighPaid, 0.8, 10.0),
            row("f", Tier::LowPaid, 0.2, 4.0),
            row("m", Tier::HighPaid, 0.1, -2.0),
            row("m", Tier::LowPaid, 0.3, 0.0),
        ];
        let t2 = AssociationTable::from_rows(
            vec![
                AssociationRow { dataset: "synthetic".into(), identity_id: "f".into(), n_samples: 1, score: 0.3 },
                AssociationRow { dataset: "synthetic".into(), identity_id: "m".into(), n_samples: 1, score: 0.7 },
            ],
            &m,
        );
        assert_eq!(t2.differentials.len(), 1);
        assert!((t2.differentials[0].value - 0.4).abs() < 1e-12);
        let agg = build_aggregates(&m, &t1, &t2).unwrap();
        let d = agg.dataset("synthetic").unwrap();
        assert_eq!(d.female_flip_high_paid, vec![StrengthValue { strength: 1.0, value: 0.8 }]);
        assert_eq!(d.male_flip_high_paid[0].value, 0.1);
        assert_eq!(d.mean_delta_ita_overall, Some(3.0));
        assert_eq!(d.mean_delta_ita_nonwhite, Some(7.0));
        assert_eq!(agg.overall_choice_rate[0].male, Some(0.7));
    }

    #[test]
    fn partial_table_is_missing_rows() {
        let m = manifest();
        let t1 = vec![row("f", Tier::HighPaid, 0.8, 10.0)];
        let err = build_aggregates(&m, &t1, &AssociationTable::default()).unwrap_err();
        let AggregateError::MissingRows(rows) = err;
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn empty_tables_are_not_an_error() {
        let agg = build_aggregates(&manifest(), &[], &AssociationTable::default()).unwrap();
        assert!(agg.datasets[0].female_flip_high_paid.is_empty());
        assert!(agg.overall_choice_rate.is_empty());
    }
}
