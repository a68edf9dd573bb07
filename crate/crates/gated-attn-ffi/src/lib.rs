//! C ABI over the gated-attention classifier.
//!
//! The surface is deliberately small: load a checkpoint into an opaque
//! handle, classify UTF-8 text, optionally pull a JSON explanation record
//! (tokens, gates, attention weights, gate probabilities), free what you
//! were given. Every call returns a `GaStatus`; on any failure
//! `ga_last_error` carries a human-readable message for the calling
//! thread until the next call from that thread.
//!
//! Ownership rules:
//! - `*mut GaModel` from `ga_model_load` is released with [`ga_model_free`].
//! - every `char*` the library hands out is released with `ga_string_free`,
//!   except `ga_version` and `ga_last_error`, which stay owned by the
//!   library.
//! - handles are not thread-safe; guard a shared handle with a lock.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use gated_attn::checkpoint::load_model;
use gated_attn::config::RunConfig;
use gated_attn::data::{make_batches, tokenize, EncodedExample, LabelMap, Vocab};
use gated_attn::metrics::AttentionRecord;
use gated_attn::model::GaNet;
use gated_attn::stochastic::GateMode;
use gated_attn::GaError;

/// Result codes. Everything except `Ok` leaves a message in `ga_last_error`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Checkpoint = 6,
    Internal = 7,
}

/// Opaque classifier handle: the network plus its vocabulary, label names,
/// and run configuration, as restored from a checkpoint.
pub struct GaModel {
    model: GaNet,
    config: RunConfig,
    vocab: Vocab,
    labels: LabelMap,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

/// Hands a Rust string to C. Interior NULs (possible in hostile label
/// names) are replaced rather than letting `CString::new` panic across the
/// FFI boundary.
fn give_string(s: String) -> *mut c_char {
    let clean = if s.contains('\0') { s.replace('\0', " ") } else { s };
    CString::new(clean).unwrap().into_raw()
}

fn status_of(err: &GaError) -> GaStatus {
    match err {
        GaError::Io { .. } => GaStatus::Io,
        GaError::Parse { .. } => GaStatus::Parse,
        GaError::Config(_) => GaStatus::Config,
        GaError::Checkpoint(_) => GaStatus::Checkpoint,
        _ => GaStatus::Internal,
    }
}

fn fail(err: &GaError) -> GaStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn utf8<'a>(p: *const c_char, what: &str) -> Result<&'a str, GaStatus> {
    if p.is_null() {
        set_error(&format!("{what} is null"));
        return Err(GaStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        GaStatus::InvalidUtf8
    })
}

fn classify_inner(h: &GaModel, text: &str) -> Result<(AttentionRecord, f64), GaError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(GaError::contract("input text has no tokens"));
    }
    let ids = h.vocab.encode(&tokens);
    let examples = vec![EncodedExample { ids, label: 0 }];
    let batch = make_batches(&examples, 1, h.config.train.max_len, None)?.remove(0);
    let out = h.model.forward_eval(&batch, GateMode::Threshold, None)?;
    let len = batch.lengths[0];
    let record = AttentionRecord {
        tokens: tokens.into_iter().take(len).collect(),
        gates: (0..len).map(|t| out.gates[t] as u8).collect(),
        alpha: out.alpha[..len].to_vec(),
        p: if out.p.is_empty() { Vec::new() } else { out.p[..len].to_vec() },
        predicted: h.labels.name(out.predicted[0]).to_string(),
        gold: String::new(),
    };
    Ok((record, out.probs[out.predicted[0]]))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ga_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message from the calling thread's most recent failed call; empty string
/// if none. Owned by the library; do not free. Invalidated by the next
/// call on this thread.
#[no_mangle]
pub extern "C" fn ga_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint from `path` into a fresh handle written to `out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ga_model_load(path: *const c_char, out: *mut *mut GaModel) -> GaStatus {
    if out.is_null() {
        set_error("output handle pointer is null");
        return GaStatus::NullPointer;
    }
    let path = match utf8(path, "checkpoint path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_model(Path::new(path)) {
        Ok((model, config, vocab, labels)) => {
            let handle = Box::new(GaModel { model, config, vocab, labels });
            *out = Box::into_raw(handle);
            GaStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a handle from `ga_model_load`. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer previously returned by `ga_model_load`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ga_model_free(model: *mut GaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes of the loaded model, or 0 on null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ga_num_classes(model: *const GaModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).labels.len()
}

/// Classify `text` (UTF-8, whitespace-friendly; the library tokenizes).
/// Writes the winning label to `label_out` (free with `ga_string_free`)
/// and, when `prob_out` is non-null, that label's probability.
///
/// # Safety
/// `model` must be a live handle, `text` a valid NUL-terminated string,
/// `label_out` a valid pointer; `prob_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ga_classify(
    model: *const GaModel,
    text: *const c_char,
    label_out: *mut *mut c_char,
    prob_out: *mut f64,
) -> GaStatus {
    if model.is_null() || label_out.is_null() {
        set_error("model or label output pointer is null");
        return GaStatus::NullPointer;
    }
    let text = match utf8(text, "input text") {
        Ok(t) => t,
        Err(status) => return status,
    };
    match classify_inner(&*model, text) {
        Ok((record, prob)) => {
            *label_out = give_string(record.predicted);
            if !prob_out.is_null() {
                *prob_out = prob;
            }
            GaStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Classify `text` and return the full explanation record as a JSON object
/// (fields: tokens, gates, alpha, p, predicted, gold; gold is empty because
/// no reference label exists at inference time). Free with
/// `ga_string_free`.
///
/// # Safety
/// `model` must be a live handle, `text` a valid NUL-terminated string,
/// `json_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ga_explain_json(
    model: *const GaModel,
    text: *const c_char,
    json_out: *mut *mut c_char,
) -> GaStatus {
    if model.is_null() || json_out.is_null() {
        set_error("model or JSON output pointer is null");
        return GaStatus::NullPointer;
    }
    let text = match utf8(text, "input text") {
        Ok(t) => t,
        Err(status) => return status,
    };
    match classify_inner(&*model, text) {
        Ok((record, _)) => {
            let json = serde_json::to_string(&record).expect("record serializes");
            *json_out = give_string(json);
            GaStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a string from `ga_classify` or `ga_explain_json`. Null is
/// ignored.
///
/// # Safety
/// `s` must be null or a string previously returned by this library that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ga_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gated_attn::config::Mechanism;
    use gated_attn::data::{encode_examples, random_table, synth_keyword_task, LabelMap};
    use gated_attn::stochastic::SeededRng;
    use gated_attn::train::train_model;
    use std::ffi::CString;
    use std::path::PathBuf;

    fn trained_checkpoint(dir: &Path) -> PathBuf {
        let data = synth_keyword_task(300, 40, 8, 3, 7).unwrap();
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("embed_dim", "10"),
            ("hidden_dim", "6"),
            ("attn_hidden", "4"),
            ("aux_hidden", "3"),
            ("epochs", "3"),
            ("batch_size", "16"),
            ("lr", "1e-2"),
            ("max_len", "8"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg.model.mechanism = Mechanism::Gated;
        let labels = LabelMap::build(&data.examples);
        let corpus: Vec<Vec<String>> =
            data.examples.iter().map(|e| e.tokens.clone()).collect();
        let vocab = Vocab::build(corpus.iter().map(|t| t.as_slice()), 1);
        let encoded = encode_examples(&data.examples, &vocab, &labels).unwrap();
        let rng = SeededRng::new(cfg.train.seed);
        let table = random_table(&vocab, cfg.model.embed_dim, &rng.derive("emb"));
        let model = GaNet::new(&cfg.model, &table, labels.len(), &rng).unwrap();
        let mut report = Vec::new();
        train_model(&model, &cfg, &encoded[..240], &encoded[240..], &rng, &mut report)
            .unwrap();
        let path = dir.join("ffi.ckpt");
        gated_attn::checkpoint::save_checkpoint(
            &path,
            &model,
            &cfg.to_map(),
            &vocab,
            &labels,
            cfg.train.seed,
            0,
        )
        .unwrap();
        path
    }

    fn load(path: &Path) -> *mut GaModel {
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut GaModel = std::ptr::null_mut();
        let status = unsafe { ga_model_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, GaStatus::Ok, "{:?}", last_error_string());
        assert!(!handle.is_null());
        handle
    }

    fn last_error_string() -> String {
        unsafe { CStr::from_ptr(ga_last_error()).to_str().unwrap().to_string() }
    }

    #[test]
    fn version_is_a_static_string() {
        let v = unsafe { CStr::from_ptr(ga_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn classify_matches_the_library_path() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = trained_checkpoint(dir.path());
        let handle = load(&ckpt);

        let text = CString::new("w003 w011 w004 w027").unwrap();
        let mut label: *mut c_char = std::ptr::null_mut();
        let mut prob = 0.0f64;
        let status = unsafe { ga_classify(handle, text.as_ptr(), &mut label, &mut prob) };
        assert_eq!(status, GaStatus::Ok, "{:?}", last_error_string());
        let got = unsafe { CStr::from_ptr(label).to_str().unwrap().to_string() };
        assert!(got.starts_with('c'), "label {got}");
        assert!((0.0..=1.0).contains(&prob));

        // the same text through the Rust API must agree exactly
        let (record, p) = classify_inner(unsafe { &*handle }, "w003 w011 w004 w027").unwrap();
        assert_eq!(record.predicted, got);
        assert_eq!(p.to_bits(), prob.to_bits());

        unsafe {
            ga_string_free(label);
            ga_model_free(handle);
        }
    }

    #[test]
    fn explain_returns_schema_complete_json() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = trained_checkpoint(dir.path());
        let handle = load(&ckpt);
        assert_eq!(unsafe { ga_num_classes(handle) }, 3);

        let text = CString::new("w001 w002 w003").unwrap();
        let mut json: *mut c_char = std::ptr::null_mut();
        let status = unsafe { ga_explain_json(handle, text.as_ptr(), &mut json) };
        assert_eq!(status, GaStatus::Ok, "{:?}", last_error_string());
        let s = unsafe { CStr::from_ptr(json).to_str().unwrap() };
        let v: serde_json::Value = serde_json::from_str(s).unwrap();
        assert_eq!(v["tokens"].as_array().unwrap().len(), 3);
        assert_eq!(v["gates"].as_array().unwrap().len(), 3);
        assert_eq!(v["alpha"].as_array().unwrap().len(), 3);
        assert_eq!(v["p"].as_array().unwrap().len(), 3);
        assert!(v["predicted"].is_string());
        assert_eq!(v["gold"], "");
        let alpha_sum: f64 = v["alpha"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!((alpha_sum - 1.0).abs() < 1e-9);

        unsafe {
            ga_string_free(json);
            ga_model_free(handle);
        }
    }

    #[test]
    fn input_validation_reports_status_and_message() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = trained_checkpoint(dir.path());
        let handle = load(&ckpt);

        let mut out: *mut GaModel = std::ptr::null_mut();
        let status = unsafe { ga_model_load(std::ptr::null(), &mut out) };
        assert_eq!(status, GaStatus::NullPointer);
        assert!(last_error_string().contains("null"));

        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        let status = unsafe { ga_model_load(missing.as_ptr(), &mut out) };
        assert_eq!(status, GaStatus::Io);

        let empty = CString::new("   ").unwrap();
        let mut label: *mut c_char = std::ptr::null_mut();
        let status = unsafe { ga_classify(handle, empty.as_ptr(), &mut label, std::ptr::null_mut()) };
        assert_eq!(status, GaStatus::Internal);
        assert!(last_error_string().contains("no tokens"));

        let bad = c"\xff\xfe";
        let status = unsafe { ga_classify(handle, bad.as_ptr(), &mut label, std::ptr::null_mut()) };
        assert_eq!(status, GaStatus::InvalidUtf8);

        unsafe { ga_model_free(handle) };
        // freeing null pointers is a no-op, not a crash
        unsafe {
            ga_model_free(std::ptr::null_mut());
            ga_string_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn truncated_checkpoint_maps_to_checkpoint_status() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"GATCKPT1 but then garbage").unwrap();
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut out: *mut GaModel = std::ptr::null_mut();
        let status = unsafe { ga_model_load(c_path.as_ptr(), &mut out) };
        assert_eq!(status, GaStatus::Checkpoint, "{:?}", last_error_string());
        assert!(out.is_null());
    }
}
