//! Corpus evaluation and report serialization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::TAU_CONTACT;
use crate::geom::ObjectTemplate;
use crate::sequence::HoiSequence;
use crate::skeleton::SkeletonSpec;

use super::fid::{fid_from_features, r_precision, RetrievalItem, SequenceEmbedder};
use super::{MetricError, FOOT_HEIGHT_THRESH};

/// Report columns, in emission order, named by the conventional symbols.
pub const METRIC_COLUMNS: [&str; 12] = [
    "FS", "Rprec", "FID", "Cprec", "Crec", "CF1", "Cpct", "Phand", "MPJPE", "Troot", "Tobj",
    "Oobj",
];

/// Per-sequence metric values (corpus-level FID/Rprec live on the report).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub fs: f64,
    pub cprec: f64,
    pub crec: f64,
    pub cf1: f64,
    pub cpct: f64,
    pub phand: f64,
    pub mpjpe: f64,
    pub troot: f64,
    pub tobj: f64,
    pub oobj: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_sequence: Vec<SequenceMetrics>,
    /// Mean of the per-sequence values.
    pub aggregate: SequenceMetrics,
    pub fid: f64,
    pub rprec: f64,
    pub extractor_id: String,
    /// Echo of thresholds and settings the numbers depend on.
    pub config: serde_json::Value,
}

fn mean_of(rows: &[SequenceMetrics], f: impl Fn(&SequenceMetrics) -> f64) -> f64 {
    rows.iter().map(&f).sum::<f64>() / rows.len().max(1) as f64
}

/// Evaluates aligned (prediction, ground truth) pairs.
///
/// Pairs must share ids; interaction metrics run on the prediction against
/// its object geometry, ground-truth difference metrics against the paired
/// sequence, and FID/R-precision over the whole corpus.
pub fn evaluate_corpus(
    pairs: &[(String, &HoiSequence, &HoiSequence)],
    templates: &BTreeMap<String, ObjectTemplate>,
    spec: &SkeletonSpec,
    embedder: &dyn SequenceEmbedder,
    pool_size: usize,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    assert!(!pairs.is_empty(), "no sequences to evaluate");
    let root = spec.joint("root");
    let mut per_sequence = Vec::with_capacity(pairs.len());
    for (id, pred, gt) in pairs {
        let template = &templates[&pred.object_id];
        let (cprec, crec, cf1) = super::contact_prf(&pred.contact, &gt.contact)?;
        per_sequence.push(SequenceMetrics {
            id: id.clone(),
            fs: super::foot_sliding(pred, spec, FOOT_HEIGHT_THRESH),
            cprec,
            crec,
            cf1,
            cpct: super::contact_percentage(pred, spec, template, TAU_CONTACT, false)?,
            phand: super::penetration_score(pred, spec, template)?,
            mpjpe: super::mpjpe(pred, gt)?,
            troot: super::t_root(pred, gt, root)?,
            tobj: super::t_obj(pred, gt)?,
            oobj: super::o_obj(pred, gt)?,
        });
    }
    let aggregate = SequenceMetrics {
        id: "aggregate".into(),
        fs: mean_of(&per_sequence, |m| m.fs),
        cprec: mean_of(&per_sequence, |m| m.cprec),
        crec: mean_of(&per_sequence, |m| m.crec),
        cf1: mean_of(&per_sequence, |m| m.cf1),
        cpct: mean_of(&per_sequence, |m| m.cpct),
        phand: mean_of(&per_sequence, |m| m.phand),
        mpjpe: mean_of(&per_sequence, |m| m.mpjpe),
        troot: mean_of(&per_sequence, |m| m.troot),
        tobj: mean_of(&per_sequence, |m| m.tobj),
        oobj: mean_of(&per_sequence, |m| m.oobj),
    };
    let pred_features: Vec<Vec<f64>> =
        pairs.iter().map(|(_, p, _)| embedder.embed_motion(p)).collect();
    let gt_features: Vec<Vec<f64>> =
        pairs.iter().map(|(_, _, g)| embedder.embed_motion(g)).collect();
    let fid = fid_from_features(&pred_features, &gt_features)?;
    let items: Vec<RetrievalItem> = pairs
        .iter()
        .zip(&pred_features)
        .map(|((_, p, _), f)| RetrievalItem {
            motion_feature: f.clone(),
            prompt: p.text_prompt.clone(),
        })
        .collect();
    let rprec = r_precision(&items, embedder, pool_size, seed)?;
    Ok(MetricReport {
        per_sequence,
        aggregate,
        fid,
        rprec,
        extractor_id: embedder.id().to_string(),
        config: serde_json::json!({
            "tau_m": TAU_CONTACT,
            "foot_height_thresh_m": FOOT_HEIGHT_THRESH,
            "pool_size": pool_size,
            "retrieval_seed": seed,
            "contact_percentage_mode": "either_hand",
            "tool_version": crate::VERSION,
        }),
    })
}

impl MetricReport {
    /// The aggregate must equal the mean of per-sequence values.
    pub fn validate(&self) -> Result<(), MetricError> {
        let checks = [
            (self.aggregate.fs, mean_of(&self.per_sequence, |m| m.fs)),
            (self.aggregate.mpjpe, mean_of(&self.per_sequence, |m| m.mpjpe)),
            (self.aggregate.tobj, mean_of(&self.per_sequence, |m| m.tobj)),
        ];
        for (a, b) in checks {
            if (a - b).abs() > 1e-9 {
                return Err(MetricError::ShapeMismatch("aggregate is not the per-sequence mean"));
            }
        }
        Ok(())
    }
}

/// Flat CSV: one row per sequence plus an aggregate row. Corpus-level FID
/// and Rprec appear only on the aggregate row.
pub fn report_csv(report: &MetricReport) -> String {
    let mut s = String::from("id,");
    s.push_str(&METRIC_COLUMNS.join(","));
    s.push('\n');
    let row = |m: &SequenceMetrics, fid: Option<f64>, rprec: Option<f64>| {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            m.id,
            m.fs,
            opt(rprec),
            opt(fid),
            m.cprec,
            m.crec,
            m.cf1,
            m.cpct,
            m.phand,
            m.mpjpe,
            m.troot,
            m.tobj,
            m.oobj
        )
    };
    for m in &report.per_sequence {
        s.push_str(&row(m, None, None));
    }
    s.push_str(&row(&report.aggregate, Some(report.fid), Some(report.rprec)));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::GeometryKind;
    use crate::sequence::tests_support::tiny_sequence;

    struct StubEmbedder;

    impl SequenceEmbedder for StubEmbedder {
        fn id(&self) -> &str {
            "stub"
        }
        fn embed_motion(&self, seq: &HoiSequence) -> Vec<f64> {
            // Mean root x plus prompt length: enough to be non-degenerate.
            let mx = seq.human.iter().map(|h| h.joints[0][0]).sum::<f64>()
                / seq.frame_count() as f64;
            vec![mx, seq.text_prompt.len() as f64 * 0.1, 1.0]
        }
        fn embed_text(&self, prompt: &str) -> Vec<f64> {
            vec![prompt.len() as f64 * 0.05, prompt.len() as f64 * 0.1, 0.5]
        }
    }

    #[test]
    fn identical_pred_gt_gives_zero_differences_and_perfect_contact() {
        let spec = crate::datagen::skeleton22();
        let template = ObjectTemplate::new(
            "box",
            GeometryKind::Box { half_extents: [0.1, 0.1, 0.1] },
            64,
            1,
            nalgebra::Vector3::zeros(),
        )
        .unwrap();
        let mut templates = BTreeMap::new();
        templates.insert("box".to_string(), template);
        let mut seqs = Vec::new();
        for i in 0..4 {
            let mut s = tiny_sequence(12, 22);
            s.object_id = "box".into();
            s.text_prompt = format!("move the box {i}");
            s.contact[3] = [1.0, 0.0];
            seqs.push(s);
        }
        let pairs: Vec<(String, &HoiSequence, &HoiSequence)> =
            seqs.iter().enumerate().map(|(i, s)| (format!("{i}"), s, s)).collect();
        let report =
            evaluate_corpus(&pairs, &templates, &spec, &StubEmbedder, 2, 1).unwrap();
        report.validate().unwrap();
        assert_eq!(report.aggregate.mpjpe, 0.0);
        assert_eq!(report.aggregate.tobj, 0.0);
        assert_eq!(report.aggregate.oobj, 0.0);
        assert_eq!(report.aggregate.cprec, 1.0);
        assert_eq!(report.aggregate.crec, 1.0);
        assert_eq!(report.aggregate.cf1, 1.0);
        assert!(report.fid < 1e-6);
        let csv = report_csv(&report);
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "id,FS,Rprec,FID,Cprec,Crec,CF1,Cpct,Phand,MPJPE,Troot,Tobj,Oobj");
        assert_eq!(csv.lines().count(), 1 + 4 + 1);
    }
}
