use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use vcprof_ffi::*;

fn cs(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { vcprof_string_free(p) };
    s
}

fn last_error() -> String {
    let p = vcprof_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn f1_matches_hand_count() {
    let preds = [1u8, 1, 0, 0, 1];
    let labels = [1u8, 0, 0, 1, 1];
    let mut out = 0.0;
    let st = unsafe { vcprof_f1(preds.as_ptr(), labels.as_ptr(), 5, false, &mut out) };
    assert_eq!(st, VcprofStatus::Ok);
    // tp 2, fp 1, fn 1
    assert!((out - 2.0 * 2.0 / (2.0 * 2.0 + 1.0 + 1.0)).abs() < 1e-12);
    let st = unsafe { vcprof_f1(preds.as_ptr(), labels.as_ptr(), 5, true, &mut out) };
    assert_eq!(st, VcprofStatus::Ok);
    // negative class: tp 1, fp 1, fn 1
    assert!((out - (4.0 / 6.0 + 2.0 / 4.0) / 2.0).abs() < 1e-12);
}

#[test]
fn bad_inputs_set_codes_and_messages() {
    let mut out = 0.0;
    let st = unsafe { vcprof_f1(ptr::null(), ptr::null(), 3, false, &mut out) };
    assert_eq!(st, VcprofStatus::NullPointer);
    assert!(last_error().contains("null"));

    let labels = [2u8, 0];
    let st = unsafe { vcprof_f1(labels.as_ptr(), labels.as_ptr(), 2, false, &mut out) };
    assert_eq!(st, VcprofStatus::InvalidArgument);

    let scores = [0.1, 0.2];
    let same = [1u8, 1];
    let st = unsafe { vcprof_roc_auc(scores.as_ptr(), same.as_ptr(), 2, &mut out) };
    assert_eq!(st, VcprofStatus::Undefined);

    let st = unsafe { vcprof_ndcg_at_k(cs("[not json").as_ptr(), cs("{}").as_ptr(), 3, &mut out) };
    assert_eq!(st, VcprofStatus::InvalidJson);

    let labels = [1u8, 0];
    let st = unsafe { vcprof_roc_auc(scores.as_ptr(), labels.as_ptr(), 2, &mut out) };
    assert_eq!(st, VcprofStatus::Ok);
    assert!(vcprof_last_error().is_null());
}

#[test]
fn auc_counts_ties_as_half() {
    let scores = [0.9, 0.5, 0.5, 0.1];
    let labels = [1u8, 1, 0, 0];
    let mut out = 0.0;
    assert_eq!(unsafe { vcprof_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out) }, VcprofStatus::Ok);
    // pairs (pos, neg): 4 total, 3 wins and 1 tie
    assert!((out - 3.5 / 4.0).abs() < 1e-12);
}

#[test]
fn spearman_of_monotone_map_is_one() {
    let a = [1.0, 5.0, 2.0, 9.0];
    let b: Vec<f64> = a.iter().map(|x: &f64| x.powi(3)).collect();
    let mut out = 0.0;
    assert_eq!(unsafe { vcprof_spearman(a.as_ptr(), b.as_ptr(), 4, &mut out) }, VcprofStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
}

#[test]
fn ndcg_against_direct_formula() {
    let rel = r#"{"a": 3.0, "b": 0.0, "c": 1.0}"#;
    let mut out = 0.0;
    let st = unsafe { vcprof_ndcg_at_k(cs(r#"["b","c","a"]"#).as_ptr(), cs(rel).as_ptr(), 2, &mut out) };
    assert_eq!(st, VcprofStatus::Ok);
    let dcg = 0.0 / 2f64.log2() + 1.0 / 3f64.log2();
    let idcg = 3.0 / 2f64.log2() + 1.0 / 3f64.log2();
    assert!((out - dcg / idcg).abs() < 1e-12);
}

#[test]
fn lexical_handle_lifecycle() {
    let recs = r#"[{"id":"r1","text":"cats and dogs"},{"id":"r2","text":"dogs dogs dogs"},{"id":"r3","text":"fish"}]"#;
    let mut idx = ptr::null_mut();
    assert_eq!(unsafe { vcprof_lexical_new(cs(recs).as_ptr(), 1.2, 0.75, &mut idx) }, VcprofStatus::Ok);
    assert_eq!(unsafe { vcprof_lexical_len(idx) }, 3);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { vcprof_lexical_score(idx, cs("dogs").as_ptr(), &mut json) }, VcprofStatus::Ok);
    let scores: BTreeMap<String, f64> = serde_json::from_str(&take(json)).unwrap();
    assert_eq!(scores.len(), 3);
    assert!(scores["r2"] > scores["r1"]);
    assert_eq!(scores["r3"], 0.0);
    unsafe { vcprof_lexical_free(idx) };

    assert_eq!(unsafe { vcprof_lexical_new(cs("[]").as_ptr(), 1.2, 0.75, &mut idx) }, VcprofStatus::InvalidArgument);
    assert!(idx.is_null());
    assert_eq!(unsafe { vcprof_lexical_new(cs(recs).as_ptr(), 1.2, 1.5, &mut idx) }, VcprofStatus::InvalidArgument);
    assert_eq!(unsafe { vcprof_lexical_len(ptr::null()) }, 0);
    unsafe { vcprof_lexical_free(ptr::null_mut()) };
}

#[test]
fn embedding_is_unit_length_and_stable() {
    let mut a = [0f32; 64];
    let mut b = [0f32; 64];
    assert_eq!(unsafe { vcprof_hash_embed(cs("the garden in spring").as_ptr(), 64, a.as_mut_ptr()) }, VcprofStatus::Ok);
    assert_eq!(unsafe { vcprof_hash_embed(cs("the garden in spring").as_ptr(), 64, b.as_mut_ptr()) }, VcprofStatus::Ok);
    assert_eq!(a, b);
    let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    assert!((norm - 1.0).abs() < 1e-5);
    assert_eq!(unsafe { vcprof_hash_embed(cs("x").as_ptr(), 0, a.as_mut_ptr()) }, VcprofStatus::InvalidArgument);
}

#[test]
fn verdicts() {
    let mut v = -1;
    assert_eq!(unsafe { vcprof_parse_verdict(cs("Yes.").as_ptr(), &mut v) }, VcprofStatus::Ok);
    assert_eq!(v, 1);
    assert_eq!(unsafe { vcprof_parse_verdict(cs("no, not really").as_ptr(), &mut v) }, VcprofStatus::Ok);
    assert_eq!(v, 0);
    assert_eq!(unsafe { vcprof_parse_verdict(cs("maybe").as_ptr(), &mut v) }, VcprofStatus::Unparseable);
}

#[test]
fn prompt_rendering_fills_slots() {
    let mut sys = ptr::null_mut();
    let mut user = ptr::null_mut();
    let slots = r#"{"post": "CMV: tea beats coffee", "comment": "Coffee has more variety."}"#;
    let st = unsafe { vcprof_render_prompt(cs("predict_none").as_ptr(), cs(slots).as_ptr(), &mut sys, &mut user) };
    assert_eq!(st, VcprofStatus::Ok);
    let (sys, user) = (take(sys), take(user));
    assert!(!sys.is_empty());
    assert!(user.contains("CMV: tea beats coffee"));
    assert!(user.contains("Coffee has more variety."));
    assert!(!user.contains("{post}"));

    let mut s2 = ptr::null_mut();
    let mut u2 = ptr::null_mut();
    let st = unsafe { vcprof_render_prompt(cs("sonnet").as_ptr(), cs("{}").as_ptr(), &mut s2, &mut u2) };
    assert_eq!(st, VcprofStatus::InvalidArgument);
    assert!(s2.is_null() && u2.is_null());
}

#[test]
fn profiler_pairs_match_brute_force() {
    let items: Vec<(String, f64)> = (0..10).map(|i| (format!("p{i}"), (i * 37 % 11) as f64 / 10.0)).collect();
    let json = serde_json::to_string(&items).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { vcprof_select_profiler_pairs(cs(&json).as_ptr(), 4, 0.05, &mut out) }, VcprofStatus::Ok);
    let got: Vec<(String, String)> = serde_json::from_str(&take(out)).unwrap();

    let mut order = items.clone();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut want = Vec::new();
    for w in &order[..4] {
        for l in &order[6..] {
            if w.1 - l.1 >= 0.05 - 1e-12 && w.1 > l.1 {
                want.push((w.0.clone(), l.0.clone()));
            }
        }
    }
    assert_eq!(got, want);
}

#[test]
fn query_pairs_respect_thresholds_and_cap() {
    let items = r#"[["a",0.9],["b",0.7],["c",0.6],["d",0.5],["e",0.2],["f",0.66]]"#;
    let mut out = ptr::null_mut();
    let st = unsafe { vcprof_select_query_pairs(cs(items).as_ptr(), 0.65, 0.55, 0.10, 3, &mut out) };
    assert_eq!(st, VcprofStatus::Ok);
    let got: Vec<(String, String)> = serde_json::from_str(&take(out)).unwrap();
    let want = [("a", "e"), ("b", "e"), ("f", "e")];
    assert_eq!(got, want.map(|(a, b)| (a.to_string(), b.to_string())));

    let st = unsafe { vcprof_select_query_pairs(cs(items).as_ptr(), 0.5, 0.55, 0.10, 3, &mut out) };
    assert_eq!(st, VcprofStatus::InvalidArgument);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(vcprof_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("vcprof.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(h.contains("typedef struct VcprofLexicalIndex VcprofLexicalIndex;"));
    assert!(h.contains("VCPROF_STATUS_OK = 0"));
}

fn cc() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().map(|o| o.status.success()).unwrap_or(false))
        .map(str::to_string)
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let h = header();
    for lang in ["c", "c++"] {
        let out = Command::new(&cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&h)
            .output()
            .unwrap();
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

/// Builds a small C program against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libvcprof_ffi.so");
    if !lib.exists() {
        eprintln!("{} not built on this platform, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "vcprof.h"

int main(void) {
    VcprofLexicalIndex *idx = NULL;
    if (vcprof_lexical_new("[{\"id\":\"a\",\"text\":\"red apple\"},{\"id\":\"b\",\"text\":\"green pear\"}]", 1.2, 0.75, &idx) != VCPROF_STATUS_OK) return 1;
    char *json = NULL;
    if (vcprof_lexical_score(idx, "apple", &json) != VCPROF_STATUS_OK) return 2;
    printf("%s\n", json);
    vcprof_string_free(json);
    vcprof_lexical_free(idx);
    int v = -1;
    if (vcprof_parse_verdict("maybe", &v) != VCPROF_STATUS_UNPARSEABLE) return 3;
    if (vcprof_last_error() == NULL) return 4;
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(profile_dir)
        .arg("-lvcprof_ffi")
        .arg("-o")
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).env("LD_LIBRARY_PATH", profile_dir).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let scores: BTreeMap<String, f64> = serde_json::from_slice(&run.stdout).unwrap();
    assert!(scores["a"] > 0.0);
    assert_eq!(scores["b"], 0.0);
}
