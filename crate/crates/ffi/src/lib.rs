//! C ABI over the deterministic parts of `vcprof`: metrics, lexical
//! retrieval, hashing embeddings, verdict parsing, prompt rendering and
//! preference-pair selection.
//!
//! Every function returns a [`VcprofStatus`]. On failure a message is kept
//! per thread and can be read with [`vcprof_last_error`]. Strings returned
//! through out-pointers are owned by the caller and must be released with
//! [`vcprof_string_free`]. Structured inputs and outputs are JSON.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vcprof::evalkit::{self as metrics, F1Mode, Gain, MetricError};
use vcprof::gateway::{parse_verdict, HashingEmbedder, PromptKind, PromptSet, ViewChange};
use vcprof::preference::{select_profiler_pairs, select_query_pairs, QueryPrefConfig};
use vcprof::retrieval::LexicalIndex;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcprofStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidJson = 4,
    /// The input was well formed but the computation is undefined for it,
    /// e.g. AUC with a single class.
    Undefined = 5,
    Unparseable = 6,
    Panic = 99,
}

/// Opaque BM25 index.
pub struct VcprofLexicalIndex {
    inner: LexicalIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(VcprofStatus, String);

impl Fail {
    fn arg(msg: impl Into<String>) -> Self {
        Fail(VcprofStatus::InvalidArgument, msg.into())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(VcprofStatus::InvalidJson, e.to_string())
    }
}

impl From<MetricError> for Fail {
    fn from(e: MetricError) -> Self {
        Fail(VcprofStatus::Undefined, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VcprofStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VcprofStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            VcprofStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(VcprofStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(VcprofStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(VcprofStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(VcprofStatus::NullPointer, format!("{name} is null")))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| Fail::arg("output contains a NUL byte"))
}

fn labels_ok(labels: &[u8]) -> Result<(), Fail> {
    if labels.iter().any(|&l| l > 1) {
        return Err(Fail::arg("labels must be 0 or 1"));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vcprof_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn vcprof_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn vcprof_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// F1 of binary predictions. `macro_average` selects macro F1 over the
/// classes present; otherwise F1 of the positive class.
///
/// # Safety
/// `preds` and `labels` must point to `n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_f1(
    preds: *const u8,
    labels: *const u8,
    n: usize,
    macro_average: bool,
    out: *mut f64,
) -> VcprofStatus {
    guard(|| {
        let p = slice_arg(preds, n, "preds")?;
        let l = slice_arg(labels, n, "labels")?;
        labels_ok(p)?;
        labels_ok(l)?;
        let mode = if macro_average { F1Mode::Macro } else { F1Mode::Positive };
        *out_arg(out, "out")? = metrics::f1(p, l, mode)?;
        Ok(())
    })
}

/// ROC AUC with tied scores counted as one half.
///
/// # Safety
/// `scores` must point to `n` doubles and `labels` to `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn vcprof_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> VcprofStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l = slice_arg(labels, n, "labels")?;
        labels_ok(l)?;
        *out_arg(out, "out")? = metrics::roc_auc(s, l)?;
        Ok(())
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `a` and `b` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn vcprof_spearman(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> VcprofStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        *out_arg(out, "out")? = metrics::spearman_rho(a, b)?;
        Ok(())
    })
}

/// NDCG@k (linear gain) of `ranking_json`, a JSON array of ids, against
/// `relevance_json`, a JSON object mapping every id to a non-negative score.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_ndcg_at_k(
    ranking_json: *const c_char,
    relevance_json: *const c_char,
    k: usize,
    out: *mut f64,
) -> VcprofStatus {
    guard(|| {
        let ranking: Vec<String> = serde_json::from_str(str_arg(ranking_json, "ranking_json")?)?;
        let relevance: BTreeMap<String, f64> = serde_json::from_str(str_arg(relevance_json, "relevance_json")?)?;
        let ids: Vec<&str> = ranking.iter().map(String::as_str).collect();
        *out_arg(out, "out")? = metrics::ndcg_at_k(&ids, &relevance, k, Gain::Linear)?;
        Ok(())
    })
}

/// Builds a BM25 index from `records_json`, a JSON array of
/// `{"id": ..., "text": ...}` objects. Free with [`vcprof_lexical_free`].
///
/// # Safety
/// `records_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_lexical_new(
    records_json: *const c_char,
    k1: f64,
    b: f64,
    out: *mut *mut VcprofLexicalIndex,
) -> VcprofStatus {
    #[derive(serde::Deserialize)]
    struct Rec {
        id: String,
        text: String,
    }
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = ptr::null_mut();
        if !(k1.is_finite() && k1 >= 0.0 && b.is_finite() && (0.0..=1.0).contains(&b)) {
            return Err(Fail::arg("need k1 >= 0 and 0 <= b <= 1"));
        }
        let recs: Vec<Rec> = serde_json::from_str(str_arg(records_json, "records_json")?)?;
        let inner = LexicalIndex::build(recs.iter().map(|r| (r.id.as_str(), r.text.as_str())), k1, b)
            .map_err(|e| Fail::arg(e.to_string()))?;
        *slot = Box::into_raw(Box::new(VcprofLexicalIndex { inner }));
        Ok(())
    })
}

/// Number of documents in the index, or 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vcprof_lexical_len(index: *const VcprofLexicalIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// BM25 scores of every document for `query`, as a JSON object id -> score.
///
/// # Safety
/// `index` must be a live handle; `query` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_lexical_score(
    index: *const VcprofLexicalIndex,
    query: *const c_char,
    out_json: *mut *mut c_char,
) -> VcprofStatus {
    guard(|| {
        let slot = out_arg(out_json, "out_json")?;
        *slot = ptr::null_mut();
        let idx = index.as_ref().ok_or_else(|| Fail(VcprofStatus::NullPointer, "index is null".into()))?;
        let scores = idx.inner.score(str_arg(query, "query")?);
        *slot = c_string(serde_json::to_string(&scores)?)?;
        Ok(())
    })
}

/// Releases an index. NULL is ignored.
///
/// # Safety
/// `index` must come from [`vcprof_lexical_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vcprof_lexical_free(index: *mut VcprofLexicalIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Writes the `dim`-dimensional hashing embedding of `text` into `out`.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn vcprof_hash_embed(text: *const c_char, dim: usize, out: *mut f32) -> VcprofStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail::arg("dim must be at least 1"));
        }
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(Fail(VcprofStatus::NullPointer, "out is null".into()));
        }
        let v = HashingEmbedder::new(dim).embed(text);
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&v);
        Ok(())
    })
}

/// Parses a yes/no verdict: 1 for view changed, 0 for unchanged.
/// Anything else yields [`VcprofStatus::Unparseable`].
///
/// # Safety
/// `raw` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_parse_verdict(raw: *const c_char, out: *mut i32) -> VcprofStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let slot = out_arg(out, "out")?;
        match parse_verdict(raw) {
            Ok(v) => {
                *slot = i32::from(v == ViewChange::ViewChanged);
                Ok(())
            }
            Err(e) => Err(Fail(VcprofStatus::Unparseable, e.to_string())),
        }
    })
}

/// Renders a bundled prompt. `kind` is one of `predict_profile`,
/// `predict_history`, `predict_none`, `profiler`, `query_stage1`,
/// `query_stage2`, `hyde`, `query_inference`; `slots_json` is a JSON object
/// of slot values. Missing slots render as empty text.
///
/// # Safety
/// String arguments must be NUL-terminated; both out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_render_prompt(
    kind: *const c_char,
    slots_json: *const c_char,
    out_system: *mut *mut c_char,
    out_user: *mut *mut c_char,
) -> VcprofStatus {
    guard(|| {
        let sys_slot = out_arg(out_system, "out_system")?;
        let user_slot = out_arg(out_user, "out_user")?;
        *sys_slot = ptr::null_mut();
        *user_slot = ptr::null_mut();
        let name = str_arg(kind, "kind")?;
        let kind: PromptKind = serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Fail::arg(format!("unknown prompt kind {name:?}")))?;
        let slots: BTreeMap<String, String> = serde_json::from_str(str_arg(slots_json, "slots_json")?)?;
        let pairs: Vec<(&str, &str)> = slots.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let r = PromptSet::default().render(kind, &pairs);
        let system = c_string(r.system)?;
        match c_string(r.user) {
            Ok(user) => {
                *sys_slot = system;
                *user_slot = user;
                Ok(())
            }
            Err(e) => {
                drop(CString::from_raw(system));
                Err(e)
            }
        }
    })
}

fn scored_items(json: &str) -> Result<Vec<(String, f64)>, Fail> {
    let items: Vec<(String, f64)> = serde_json::from_str(json)?;
    if items.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Fail::arg("scores must be finite"));
    }
    Ok(items)
}

fn pairs_json(items: &[(String, f64)], idx: &[(usize, usize)]) -> Result<*mut c_char, Fail> {
    let out: Vec<[&str; 2]> = idx.iter().map(|&(w, l)| [items[w].0.as_str(), items[l].0.as_str()]).collect();
    c_string(serde_json::to_string(&out)?)
}

/// Profiler pairs from `items_json`, a JSON array of `[id, score]`: every
/// (top-k, bottom-k) combination whose score gap reaches `delta`. Output is a
/// JSON array of `[chosen_id, rejected_id]`.
///
/// # Safety
/// `items_json` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_select_profiler_pairs(
    items_json: *const c_char,
    k: usize,
    delta: f64,
    out_json: *mut *mut c_char,
) -> VcprofStatus {
    guard(|| {
        let slot = out_arg(out_json, "out_json")?;
        *slot = ptr::null_mut();
        if !delta.is_finite() {
            return Err(Fail::arg("delta must be finite"));
        }
        let items = scored_items(str_arg(items_json, "items_json")?)?;
        let view: Vec<(&str, f64)> = items.iter().map(|(i, s)| (i.as_str(), *s)).collect();
        *slot = pairs_json(&items, &select_profiler_pairs(&view, k, delta))?;
        Ok(())
    })
}

/// Query-generator pairs from `items_json` (`[id, score]` array): chosen at
/// or above `pos_threshold`, rejected at or below `neg_threshold`, margin at
/// least `min_margin`, largest margins first, at most `max_pairs`.
///
/// # Safety
/// `items_json` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn vcprof_select_query_pairs(
    items_json: *const c_char,
    pos_threshold: f64,
    neg_threshold: f64,
    min_margin: f64,
    max_pairs: usize,
    out_json: *mut *mut c_char,
) -> VcprofStatus {
    guard(|| {
        let slot = out_arg(out_json, "out_json")?;
        *slot = ptr::null_mut();
        let cfg = QueryPrefConfig { pos_threshold, neg_threshold, min_margin, max_pairs_per_post: max_pairs };
        cfg.validate().map_err(|e| Fail::arg(e.to_string()))?;
        let items = scored_items(str_arg(items_json, "items_json")?)?;
        let view: Vec<(&str, f64)> = items.iter().map(|(i, s)| (i.as_str(), *s)).collect();
        *slot = pairs_json(&items, &select_query_pairs(&view, &cfg))?;
        Ok(())
    })
}
