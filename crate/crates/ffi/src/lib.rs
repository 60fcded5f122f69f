//! C ABI over the `binrisk` library.
//!
//! Conventions:
//! * Every fallible entry point returns a [`BrStatus`] and writes results
//!   through out-pointers, which are left untouched on failure.
//! * On failure [`br_last_error`] returns a message for the calling thread.
//! * Handles (`BrCpg`, `BrLattice`, `BrKg`) are opaque and released with
//!   their `*_free` function; freeing NULL is a no-op.
//! * Strings returned through `char **` are owned by the caller and released
//!   with [`br_string_free`].
//! * Panics never cross the boundary; they surface as `BR_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use binrisk::cpg::CpgGraph;
use binrisk::embedding::{cosine, EmbeddingVector};
use binrisk::error::Error;
use binrisk::fingerprint::{roc_auc, select_threshold, similarity, Fingerprint, ScoredSample, ThresholdGrid};
use binrisk::graphormer::NodeEmbedding;
use binrisk::lattice::Lattice;
use binrisk::metrics::{classification_metrics, ConfusionCounts, Metric};
use binrisk::pipeline::{self, PipelineConfig, RiskBands};
use binrisk::risk::{propagate, PropagationConfig};
use binrisk::ssckg::SsckgGraph;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Schema = 5,
    Lattice = 6,
    Lifting = 7,
    Embedding = 8,
    Graph = 9,
    Model = 10,
    Risk = 11,
    Fingerprint = 12,
    Metrics = 13,
    Pipeline = 14,
    InvalidArgument = 15,
    Panic = 16,
}

fn status_of(e: &Error) -> BrStatus {
    match e {
        Error::Io { .. } => BrStatus::Io,
        Error::Parse(_) => BrStatus::Parse,
        Error::Schema(_) | Error::UnknownNode(_) | Error::UnknownFunction(_) => BrStatus::Schema,
        Error::UnknownLabel(_) | Error::InvalidLattice(_) | Error::EmptyGoldenSet => BrStatus::Lattice,
        Error::AnnotatorFailure { .. } | Error::InvalidRule { .. } | Error::MissingAnnotation(_) => BrStatus::Lifting,
        Error::MissingEmbedding(_)
        | Error::DimensionMismatch { .. }
        | Error::ZeroVector
        | Error::InvalidEmbedding(_) => BrStatus::Embedding,
        Error::Ssckg(_) => BrStatus::Graph,
        Error::Config(_)
        | Error::ShapeMismatch(_)
        | Error::EmptyGraph
        | Error::VersionMismatch { .. }
        | Error::CorruptFile(_) => BrStatus::Model,
        Error::InvalidPropagation(_) | Error::NonConvergence { .. } => BrStatus::Risk,
        Error::EmptyTarget
        | Error::InvalidFingerprint(_)
        | Error::SingleClassInput
        | Error::InvalidScore(_)
        | Error::InvalidGrid(_) => BrStatus::Fingerprint,
        Error::LengthMismatch(..) | Error::InvalidInput(_) => BrStatus::Metrics,
        Error::Pipeline(_) => BrStatus::Pipeline,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(BrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: BrStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> BrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            BrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside binrisk");
            BrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(BrStatus::NullPointer, format!("{name} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(BrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .map_or_else(|| fail(BrStatus::NullPointer, format!("{name} is NULL")), Ok)
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(BrStatus::NullPointer, format!("{name} is NULL")), Ok)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(BrStatus::NullPointer, format!("{name} is NULL"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .or_else(|_| fail(BrStatus::InvalidUtf8, "string contains NUL"))
}

fn vectors(data: &[f64], dim: usize) -> Result<Vec<EmbeddingVector>, Failure> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return fail(BrStatus::InvalidArgument, "vector data is not a whole number of rows");
    }
    Ok(data
        .chunks(dim)
        .map(|c| EmbeddingVector::new(c.to_vec()))
        .collect::<Result<_, _>>()?)
}

/// Message describing the last failure on this thread, or "" after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn br_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn br_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn br_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque code property graph.
pub struct BrCpg(CpgGraph);

/// Opaque behavior lattice.
pub struct BrLattice(Lattice);

/// Opaque knowledge graph.
pub struct BrKg(SsckgGraph);

#[no_mangle]
pub unsafe extern "C" fn br_cpg_load(path: *const c_char, out: *mut *mut BrCpg) -> BrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let g = binrisk::cpg::load_cpg(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(BrCpg(g)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_cpg_from_json(json: *const c_char, out: *mut *mut BrCpg) -> BrStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BrCpg(CpgGraph::from_json_str(json)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_cpg_node_count(cpg: *const BrCpg, out: *mut usize) -> BrStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(cpg, "cpg")?.0.node_count();
        Ok(())
    })
}

/// Whether `to` is reachable from `from` along PDG edges.
#[no_mangle]
pub unsafe extern "C" fn br_cpg_pdg_reachable(cpg: *const BrCpg, from: u64, to: u64, out: *mut bool) -> BrStatus {
    guard(|| {
        let g = &ref_arg(cpg, "cpg")?.0;
        *out_arg(out, "out")? = g.pdg_reachable(from, to)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_cpg_free(cpg: *mut BrCpg) {
    if !cpg.is_null() {
        drop(Box::from_raw(cpg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn br_lattice_default(out: *mut *mut BrLattice) -> BrStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(BrLattice(Lattice::default_ics())));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_lattice_load(path: *const c_char, out: *mut *mut BrLattice) -> BrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BrLattice(Lattice::load(&PathBuf::from(path))?)));
        Ok(())
    })
}

/// `a ⊑ b` for labels written as `Category/Action/Context` or `TOP`.
#[no_mangle]
pub unsafe extern "C" fn br_lattice_leq(
    lattice: *const BrLattice,
    a: *const c_char,
    b: *const c_char,
    out: *mut bool,
) -> BrStatus {
    guard(|| {
        let l = &ref_arg(lattice, "lattice")?.0;
        let a = l.parse(str_arg(a, "a")?)?;
        let b = l.parse(str_arg(b, "b")?)?;
        *out_arg(out, "out")? = l.leq(&a, &b)?;
        Ok(())
    })
}

/// Least upper bound of two labels, returned as a new string.
#[no_mangle]
pub unsafe extern "C" fn br_lattice_join(
    lattice: *const BrLattice,
    a: *const c_char,
    b: *const c_char,
    out: *mut *mut c_char,
) -> BrStatus {
    guard(|| {
        let l = &ref_arg(lattice, "lattice")?.0;
        let a = l.parse(str_arg(a, "a")?)?;
        let b = l.parse(str_arg(b, "b")?)?;
        let out = out_arg(out, "out")?;
        *out = c_string(l.join(&a, &b)?.to_string())?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_lattice_free(lattice: *mut BrLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

#[no_mangle]
pub unsafe extern "C" fn br_kg_load(path: *const c_char, out: *mut *mut BrKg) -> BrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(BrKg(SsckgGraph::load(&PathBuf::from(path))?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_kg_entity_count(kg: *const BrKg, out: *mut usize) -> BrStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(kg, "kg")?.0.entities.len();
        Ok(())
    })
}

/// Graphviz DOT text for the graph, without risk coloring.
#[no_mangle]
pub unsafe extern "C" fn br_kg_to_dot(kg: *const BrKg, out: *mut *mut c_char) -> BrStatus {
    guard(|| {
        let kg = &ref_arg(kg, "kg")?.0;
        let out = out_arg(out, "out")?;
        *out = c_string(pipeline::export_dot(kg, None, &RiskBands::default()))?;
        Ok(())
    })
}

/// Composite risk by power iteration. `inherent` and `out` hold one value
/// per entity; `iterations` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn br_kg_propagate(
    kg: *const BrKg,
    inherent: *const f64,
    len: usize,
    beta: f64,
    tolerance: f64,
    max_iterations: usize,
    out: *mut f64,
    iterations: *mut usize,
) -> BrStatus {
    guard(|| {
        let kg = &ref_arg(kg, "kg")?.0;
        let inherent = slice_arg(inherent, len, "inherent")?;
        if out.is_null() && len > 0 {
            return fail(BrStatus::NullPointer, "out is NULL");
        }
        let cfg = PropagationConfig {
            beta,
            tolerance,
            max_iterations,
            ..PropagationConfig::default()
        };
        let r = propagate(kg, inherent, &cfg)?;
        if len > 0 {
            std::slice::from_raw_parts_mut(out, len).copy_from_slice(&r.values);
        }
        if let Some(it) = iterations.as_mut() {
            *it = r.iterations;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_kg_free(kg: *mut BrKg) {
    if !kg.is_null() {
        drop(Box::from_raw(kg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn br_cosine(a: *const f64, b: *const f64, dim: usize, out: *mut f64) -> BrStatus {
    guard(|| {
        let a = EmbeddingVector::new(slice_arg(a, dim, "a")?.to_vec())?;
        let b = EmbeddingVector::new(slice_arg(b, dim, "b")?.to_vec())?;
        *out_arg(out, "out")? = cosine(&a, &b)?;
        Ok(())
    })
}

/// Average best-match cosine of a fingerprint against a target. Both are
/// row-major `rows × dim` matrices; target rows take entity ids 0, 1, ...
#[no_mangle]
pub unsafe extern "C" fn br_similarity(
    target: *const f64,
    target_rows: usize,
    fingerprint: *const f64,
    fingerprint_rows: usize,
    dim: usize,
    out: *mut f64,
) -> BrStatus {
    guard(|| {
        let t = vectors(slice_arg(target, target_rows * dim, "target")?, dim)?;
        let f = vectors(slice_arg(fingerprint, fingerprint_rows * dim, "fingerprint")?, dim)?;
        let target: Vec<NodeEmbedding> = t
            .into_iter()
            .enumerate()
            .map(|(i, z)| NodeEmbedding {
                entity_id: i as u32,
                name: String::new(),
                z,
            })
            .collect();
        let fp = Fingerprint::new("ffi", "", f)?;
        *out_arg(out, "out")? = similarity(&target, &fp)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BrThreshold {
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub j: f64,
    /// False when no grid point met the FPR cap.
    pub cap_satisfied: bool,
}

unsafe fn samples(scores: *const f64, labels: *const u8, len: usize) -> Result<Vec<ScoredSample>, Failure> {
    let s = slice_arg(scores, len, "scores")?;
    let l = slice_arg(labels, len, "labels")?;
    Ok(s.iter().zip(l).map(|(&v, &m)| ScoredSample::new(v, m != 0)).collect())
}

/// Youden-J threshold over `lo..=hi` by `step` subject to FPR ≤ `fpr_cap`.
/// `labels[i]` is nonzero for malicious samples.
#[no_mangle]
pub unsafe extern "C" fn br_select_threshold(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    lo: f64,
    hi: f64,
    step: f64,
    fpr_cap: f64,
    out: *mut BrThreshold,
) -> BrStatus {
    guard(|| {
        let samples = samples(scores, labels, len)?;
        let out = out_arg(out, "out")?;
        let r = select_threshold(&samples, &ThresholdGrid { lo, hi, step }, fpr_cap)?;
        *out = BrThreshold {
            tau: r.tau,
            tpr: r.tpr,
            fpr: r.fpr,
            j: r.j_statistic,
            cap_satisfied: r.cap_satisfied,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn br_roc_auc(scores: *const f64, labels: *const u8, len: usize, out: *mut f64) -> BrStatus {
    guard(|| {
        let samples = samples(scores, labels, len)?;
        *out_arg(out, "out")? = roc_auc(&samples)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BrMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub fpr: f64,
    /// Bit set of metrics reported as 0 because their denominator was zero:
    /// 1 precision, 2 recall, 4 f1, 8 mcc, 16 fpr.
    pub undefined: u32,
}

#[no_mangle]
pub unsafe extern "C" fn br_classification_metrics(tp: u64, fp: u64, tn: u64, fn_: u64, out: *mut BrMetrics) -> BrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = classification_metrics(&ConfusionCounts::new(tp, fp, tn, fn_))?;
        let undefined = m.undefined.iter().fold(0u32, |acc, u| {
            acc | match u {
                Metric::Precision => 1,
                Metric::Recall => 2,
                Metric::F1 => 4,
                Metric::Mcc => 8,
                Metric::Fpr => 16,
            }
        });
        *out = BrMetrics {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            mcc: m.mcc,
            fpr: m.fpr,
            undefined,
        };
        Ok(())
    })
}

/// Runs every stage for one CPG, writing artifacts under `out_dir`.
/// `config_path` may be NULL for defaults. The report JSON is returned
/// through `report_json` (free with [`br_string_free`]); `alert` is set
/// when any fingerprint matched.
#[no_mangle]
pub unsafe extern "C" fn br_run_pipeline(
    config_path: *const c_char,
    cpg_path: *const c_char,
    out_dir: *const c_char,
    report_json: *mut *mut c_char,
    alert: *mut bool,
) -> BrStatus {
    guard(|| {
        let cfg = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?
        };
        let cpg = PathBuf::from(str_arg(cpg_path, "cpg_path")?);
        let out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let report_json = out_arg(report_json, "report_json")?;
        let outcomes = pipeline::run_pipeline(&cfg, &[cpg], &out_dir, 1)?;
        let report = &outcomes[0].report;
        *report_json = c_string(binrisk::io::to_json_pretty(report)?)?;
        if let Some(a) = alert.as_mut() {
            *a = report.has_alerts();
        }
        Ok(())
    })
}

