//! Redaction-quality evaluation: optimal IoU matching (mean Hungarian
//! IoU), per-class average precision with the 10-threshold sweep, and the
//! corpus-level report comparing methods.
//!
//! mHIoU is the optimal-assignment IoU sum divided by `max(|preds|,
//! |gts|)`, penalizing misses and spurious redactions symmetrically; the
//! degenerate empty-vs-empty case scores 1.0. AP uses 101-point
//! interpolation with greedy score-ordered matching. Both choices are
//! isolated here so they can be swapped without touching the pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{read_annotation, read_manifest};
use crate::geometry::{iou, BBox, RedactionClass};
use crate::raster::Raster;
use crate::redactor::AnnotatedDocument;

/// Outcome of the optimal one-to-one assignment between predictions and
/// ground truth; pairs with zero IoU count as unmatched.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(pred index, gt index, iou)` sorted by prediction index.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// One-to-one assignment maximizing total IoU (optimal, not greedy).
pub fn hungarian_match(preds: &[BBox], gts: &[BBox]) -> MatchResult {
    let n = preds.len();
    let m = gts.len();
    let k = n.max(m);
    if k == 0 {
        return MatchResult {
            pairs: Vec::new(),
            unmatched_preds: Vec::new(),
            unmatched_gts: Vec::new(),
        };
    }

    // Minimization over a square matrix padded with zero cost; real cells
    // carry -iou, so the minimum-cost assignment maximizes the IoU sum.
    let cost = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            -iou(&preds[i], &gts[j])
        } else {
            0.0
        }
    };

    // Assignment by potentials; p[j] is the row matched to column j.
    const INF: f64 = f64::INFINITY;
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut matched_pred = vec![false; n];
    let mut matched_gt = vec![false; m];
    for j in 1..=k {
        let i = p[j];
        if i >= 1 && i - 1 < n && j - 1 < m {
            let overlap = iou(&preds[i - 1], &gts[j - 1]);
            if overlap > 0.0 {
                pairs.push((i - 1, j - 1, overlap));
                matched_pred[i - 1] = true;
                matched_gt[j - 1] = true;
            }
        }
    }
    pairs.sort_by_key(|&(pi, _, _)| pi);
    MatchResult {
        pairs,
        unmatched_preds: (0..n).filter(|&i| !matched_pred[i]).collect(),
        unmatched_gts: (0..m).filter(|&j| !matched_gt[j]).collect(),
    }
}

/// Mean Hungarian IoU: matched IoU sum over `max(|preds|, |gts|)`;
/// defined as 1.0 when both lists are empty.
pub fn mhiou(preds: &[BBox], gts: &[BBox]) -> f64 {
    if preds.is_empty() && gts.is_empty() {
        return 1.0;
    }
    if preds.is_empty() || gts.is_empty() {
        return 0.0;
    }
    let result = hungarian_match(preds, gts);
    let total: f64 = result.pairs.iter().map(|&(_, _, v)| v).sum();
    total / preds.len().max(gts.len()) as f64
}

/// The ten IoU thresholds 0.50 to 0.95 in equal steps of 0.05.
pub const MAP_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Average precision at one IoU threshold: predictions in descending
/// score order (ties: larger area, then reading order, then input order)
/// greedily match the highest-IoU unmatched ground truth at or above the
/// threshold; 101-point interpolated area under precision-recall.
pub fn average_precision(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    if preds.is_empty() {
        return 0.0;
    }

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = &preds[a];
        let pb = &preds[b];
        pb.score
            .total_cmp(&pa.score)
            .then(pb.area().total_cmp(&pa.area()))
            .then(pa.y.total_cmp(&pb.y))
            .then(pa.x.total_cmp(&pb.x))
            .then(a.cmp(&b))
    });

    let mut gt_used = vec![false; gts.len()];
    let mut tp_flags = Vec::with_capacity(preds.len());
    for &pi in &order {
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_used[gi] {
                continue;
            }
            let overlap = iou(&preds[pi], gt);
            if overlap >= iou_threshold && best.is_none_or(|(bo, _)| overlap > bo) {
                best = Some((overlap, gi));
            }
        }
        if let Some((_, gi)) = best {
            gt_used[gi] = true;
            tp_flags.push(true);
        } else {
            tp_flags.push(false);
        }
    }

    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        recalls.push(tp as f64 / gts.len() as f64);
        precisions.push(tp as f64 / (rank + 1) as f64);
    }

    // Precision envelope from the right, then 101 evenly spaced recall
    // points.
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    let mut idx = 0usize;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        while idx < recalls.len() && recalls[idx] < target {
            idx += 1;
        }
        if idx < envelope.len() {
            total += envelope[idx];
        }
    }
    total / 101.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapScores {
    pub map: f64,
    pub map50: f64,
    pub map75: f64,
}

/// Per-class AP scores: the threshold-sweep mean and the two single
/// thresholds reported alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassAp {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

fn filter_class(boxes: &[BBox], class: RedactionClass) -> Vec<BBox> {
    boxes.iter().filter(|b| b.class == class).cloned().collect()
}

/// AP sweep per class, for the classes present in the ground truth.
pub fn map_sweep_per_class(preds: &[BBox], gts: &[BBox]) -> BTreeMap<RedactionClass, ClassAp> {
    let mut out = BTreeMap::new();
    for class in RedactionClass::ALL {
        let g = filter_class(gts, class);
        if g.is_empty() {
            continue;
        }
        let p = filter_class(preds, class);
        let aps: Vec<f64> = MAP_THRESHOLDS
            .iter()
            .map(|&t| average_precision(&p, &g, t))
            .collect();
        out.insert(
            class,
            ClassAp {
                ap: aps.iter().sum::<f64>() / aps.len() as f64,
                ap50: aps[0],
                ap75: aps[5],
            },
        );
    }
    out
}

/// Class-averaged mAP over the threshold sweep plus the mAP50/mAP75
/// single-threshold scores. Classes absent from the ground truth are
/// excluded from the average.
pub fn map_sweep(preds: &[BBox], gts: &[BBox]) -> MapScores {
    let per_class = map_sweep_per_class(preds, gts);
    if per_class.is_empty() {
        let v = if preds.is_empty() { 1.0 } else { 0.0 };
        return MapScores {
            map: v,
            map50: v,
            map75: v,
        };
    }
    let n = per_class.len() as f64;
    MapScores {
        map: per_class.values().map(|c| c.ap).sum::<f64>() / n,
        map50: per_class.values().map(|c| c.ap50).sum::<f64>() / n,
        map75: per_class.values().map(|c| c.ap75).sum::<f64>() / n,
    }
}

/// Everything measured for one document and one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocMetrics {
    /// Class-agnostic mHIoU over all boxes: redaction coverage is a purely
    /// geometric question.
    pub mhiou: f64,
    pub map: f64,
    pub map50: f64,
    pub map75: f64,
    pub per_class: BTreeMap<RedactionClass, ClassMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub mhiou: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

pub fn evaluate_document(preds: &[BBox], gts: &[BBox]) -> DocMetrics {
    let sweep = map_sweep(preds, gts);
    let mut per_class = BTreeMap::new();
    for (class, ap) in map_sweep_per_class(preds, gts) {
        let p = filter_class(preds, class);
        let g = filter_class(gts, class);
        per_class.insert(
            class,
            ClassMetrics {
                mhiou: mhiou(&p, &g),
                ap: ap.ap,
                ap50: ap.ap50,
                ap75: ap.ap75,
            },
        );
    }
    DocMetrics {
        mhiou: mhiou(preds, gts),
        map: sweep.map,
        map50: sweep.map50,
        map75: sweep.map75,
        per_class,
    }
}

/// One document to evaluate: its scan, identity, and ground truth.
pub struct EvalDoc {
    pub doc_id: String,
    pub model_id: String,
    pub image: Raster,
    pub ground_truth: AnnotatedDocument,
}

/// A named redaction producer under evaluation.
pub struct EvalMethod<'a> {
    pub name: String,
    #[allow(clippy::type_complexity)]
    pub run: Box<dyn Fn(&EvalDoc) -> Result<AnnotatedDocument> + Sync + 'a>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateMetrics {
    pub documents: usize,
    pub mhiou: f64,
    pub map: f64,
    pub map50: f64,
    pub map75: f64,
    /// Mean over the documents whose ground truth contains the class;
    /// classes absent from every document are omitted (N/A in the table).
    pub per_class: BTreeMap<RedactionClass, ClassAggregate>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassAggregate {
    pub documents: usize,
    pub mhiou: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub overall: AggregateMetrics,
    pub per_model: BTreeMap<String, AggregateMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}

fn aggregate(rows: &[&DocMetrics]) -> AggregateMetrics {
    let n = rows.len().max(1) as f64;
    let mut per_class: BTreeMap<RedactionClass, ClassAggregate> = BTreeMap::new();
    for class in RedactionClass::ALL {
        let class_rows: Vec<&ClassMetrics> =
            rows.iter().filter_map(|r| r.per_class.get(&class)).collect();
        if class_rows.is_empty() {
            continue;
        }
        let cn = class_rows.len() as f64;
        per_class.insert(
            class,
            ClassAggregate {
                documents: class_rows.len(),
                mhiou: class_rows.iter().map(|c| c.mhiou).sum::<f64>() / cn,
                ap: class_rows.iter().map(|c| c.ap).sum::<f64>() / cn,
                ap50: class_rows.iter().map(|c| c.ap50).sum::<f64>() / cn,
                ap75: class_rows.iter().map(|c| c.ap75).sum::<f64>() / cn,
            },
        );
    }
    AggregateMetrics {
        documents: rows.len(),
        mhiou: rows.iter().map(|r| r.mhiou).sum::<f64>() / n,
        map: rows.iter().map(|r| r.map).sum::<f64>() / n,
        map50: rows.iter().map(|r| r.map50).sum::<f64>() / n,
        map75: rows.iter().map(|r| r.map75).sum::<f64>() / n,
        per_class,
    }
}

/// Run every method over every non-reference document of the corpus and
/// aggregate per model and overall by unweighted mean over documents.
pub fn evaluate_corpus(
    methods: &[EvalMethod<'_>],
    corpus_dir: &Path,
    jobs: usize,
) -> Result<EvalReport> {
    let manifest = read_manifest(&corpus_dir.join("manifest.json"))?;
    let mut docs = Vec::new();
    for entry in manifest.iter().filter(|e| !e.reference) {
        let image_path = corpus_dir.join(&entry.image);
        if !image_path.is_file() {
            return Err(Error::MissingFile(image_path));
        }
        docs.push(EvalDoc {
            doc_id: entry.doc_id.clone(),
            model_id: entry.model_id.clone(),
            image: Raster::load_pnm(&image_path)?,
            ground_truth: read_annotation(&corpus_dir.join(&entry.annotation))?,
        });
    }

    let compute = |doc: &EvalDoc| -> Result<Vec<DocMetrics>> {
        methods
            .iter()
            .map(|method| {
                let predicted = (method.run)(doc)?;
                Ok(evaluate_document(&predicted.boxes, &doc.ground_truth.boxes))
            })
            .collect()
    };

    let jobs = jobs.max(1).min(docs.len().max(1));
    let rows: Vec<Vec<DocMetrics>> = if jobs <= 1 {
        docs.iter().map(compute).collect::<Result<_>>()?
    } else {
        let chunk = docs.len().div_ceil(jobs);
        let mut rows: Vec<Result<Vec<DocMetrics>>> = Vec::with_capacity(docs.len());
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for part in docs.chunks(chunk) {
                handles.push(scope.spawn(move || part.iter().map(compute).collect::<Vec<_>>()));
            }
            for handle in handles {
                rows.extend(handle.join().expect("evaluation worker panicked"));
            }
        });
        rows.into_iter().collect::<Result<_>>()?
    };

    let mut reports = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let method_rows: Vec<&DocMetrics> = rows.iter().map(|r| &r[mi]).collect();
        let mut per_model: BTreeMap<String, Vec<&DocMetrics>> = BTreeMap::new();
        for (doc, row) in docs.iter().zip(&method_rows) {
            per_model.entry(doc.model_id.clone()).or_default().push(row);
        }
        reports.push(MethodReport {
            method: method.name.clone(),
            overall: aggregate(&method_rows),
            per_model: per_model
                .into_iter()
                .map(|(model, rows)| (model, aggregate(&rows)))
                .collect(),
        });
    }
    Ok(EvalReport { methods: reports })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Aligned plain-text table: one section per scope, one row per
    /// method, per-class mAP columns with N/A where a class is absent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut scopes: Vec<(String, Vec<(&str, &AggregateMetrics)>)> = Vec::new();
        scopes.push((
            "overall".to_string(),
            self.methods
                .iter()
                .map(|m| (m.method.as_str(), &m.overall))
                .collect(),
        ));
        if let Some(first) = self.methods.first() {
            for model in first.per_model.keys() {
                scopes.push((
                    format!("model {model}"),
                    self.methods
                        .iter()
                        .filter_map(|m| {
                            m.per_model.get(model).map(|agg| (m.method.as_str(), agg))
                        })
                        .collect(),
                ));
            }
        }

        let fmt = |v: f64| format!("{v:.3}");
        for (scope, rows) in scopes {
            let documents = rows.first().map_or(0, |(_, agg)| agg.documents);
            out.push_str(&format!("== {scope} ({documents} documents) ==\n"));
            out.push_str(&format!(
                "{:<22} {:>6} {:>6} {:>6} {:>6} |",
                "Method", "mHIoU", "mAP", "mAP50", "mAP75"
            ));
            for class in RedactionClass::ALL {
                out.push_str(&format!(" {:>9}", class.as_str()));
            }
            out.push('\n');
            for (name, agg) in rows {
                out.push_str(&format!(
                    "{:<22} {:>6} {:>6} {:>6} {:>6} |",
                    name,
                    fmt(agg.mhiou),
                    fmt(agg.map),
                    fmt(agg.map50),
                    fmt(agg.map75)
                ));
                for class in RedactionClass::ALL {
                    match agg.per_class.get(&class) {
                        Some(c) => out.push_str(&format!(" {:>9}", fmt(c.ap))),
                        None => out.push_str(&format!(" {:>9}", "N/A")),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
