use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use audiopedia_ffi::*;

const KB: &str = "Subway\testablished in\t1965\nSubway\tserves\tsalad and sandwich\n\
KFC\testablished in\t1952\nKFC\tserves\tfried chicken\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ap_last_error()) }
        .to_string_lossy()
        .into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    ap_string_free(s);
    out
}

fn kb() -> *mut ApKb {
    let mut kb = ptr::null_mut();
    assert_eq!(
        unsafe { ap_kb_from_text(c(KB).as_ptr(), &mut kb) },
        ApStatus::Ok
    );
    kb
}

#[test]
fn kb_round_trip() {
    unsafe {
        let kb = kb();
        let mut n = 0;
        assert_eq!(ap_kb_entity_count(kb, &mut n), ApStatus::Ok);
        assert_eq!(n, 2);
        let mut id = u32::MAX;
        assert_eq!(
            ap_kb_lookup(kb, c("  SUBWAY ").as_ptr(), &mut id),
            ApStatus::Ok
        );
        let mut name = ptr::null_mut();
        assert_eq!(ap_kb_entity_name(kb, id, &mut name), ApStatus::Ok);
        assert_eq!(take(name), "Subway");
        let mut view = ptr::null_mut();
        assert_eq!(
            ap_kb_knowledge_view(kb, id, c("name").as_ptr(), &mut view),
            ApStatus::Ok
        );
        assert_eq!(take(view), "Subway");
        assert_eq!(
            ap_kb_knowledge_view(kb, id, c("partial=0.5:3").as_ptr(), &mut view),
            ApStatus::Ok
        );
        assert_eq!(
            take(view).matches(". ").count(),
            0,
            "one of two sentences kept"
        );
        ap_kb_free(kb);
    }
}

#[test]
fn errors_are_codes_with_messages() {
    unsafe {
        let kb = kb();
        let mut out = ptr::null_mut();
        assert_eq!(
            ap_kb_from_text(c("").as_ptr(), &mut out),
            ApStatus::ErrInvalid
        );
        assert!(out.is_null(), "out untouched on failure");
        assert!(last_error().contains("empty"), "{}", last_error());
        assert_eq!(
            ap_kb_from_text(c("a\tb\n").as_ptr(), &mut out),
            ApStatus::ErrInvalid
        );
        assert!(last_error().contains("line 1"), "{}", last_error());
        assert_eq!(
            ap_kb_from_path(c("/nonexistent/kb.tsv").as_ptr(), &mut out),
            ApStatus::ErrIo
        );
        let mut id = 0;
        assert_eq!(
            ap_kb_lookup(kb, c("Wendy's").as_ptr(), &mut id),
            ApStatus::ErrNotFound
        );
        let mut s = ptr::null_mut();
        assert_eq!(ap_kb_entity_name(kb, 7, &mut s), ApStatus::ErrNotFound);
        assert_eq!(
            ap_kb_knowledge_view(kb, 0, c("half").as_ptr(), &mut s),
            ApStatus::ErrInvalid
        );
        assert_eq!(
            ap_kb_entity_count(ptr::null(), ptr::null_mut()),
            ApStatus::ErrNull
        );
        assert_eq!(
            ap_kb_lookup(kb, c("kfc").as_ptr(), ptr::null_mut()),
            ApStatus::ErrNull
        );
        let bad = [0x66u8, 0xff, 0];
        assert_eq!(
            ap_kb_lookup(kb, bad.as_ptr().cast(), &mut id),
            ApStatus::ErrUtf8
        );
        assert_eq!(ap_kb_entity_count(kb, &mut 0), ApStatus::Ok);
        assert_eq!(last_error(), "");
        ap_kb_free(kb);
        ap_kb_free(ptr::null_mut());
        ap_index_free(ptr::null_mut());
        ap_string_free(ptr::null_mut());
    }
}

#[test]
fn linking_and_metrics() {
    unsafe {
        let kb = kb();
        let mut index = ptr::null_mut();
        assert_eq!(
            ap_index_build(kb, c("full").as_ptr(), &mut index),
            ApStatus::Ok
        );
        ap_kb_free(kb);
        let (mut id, mut score) = (u32::MAX, -1.0);
        assert_eq!(
            ap_index_link(index, c("salad and sandwich").as_ptr(), &mut id, &mut score),
            ApStatus::Ok
        );
        assert_eq!(id, 0);
        assert!(score > 0.0 && score <= 1.0 + 1e-12);
        assert_eq!(
            ap_index_link(index, c("fried chicken").as_ptr(), &mut id, ptr::null_mut()),
            ApStatus::Ok
        );
        assert_eq!(id, 1);
        ap_index_free(index);

        let mut v = 0.0;
        assert_eq!(
            ap_aqa_accuracy(c("no idea").as_ptr(), c("1965").as_ptr(), &mut v),
            ApStatus::Ok
        );
        assert_eq!(v, 0.0);
        assert_eq!(
            ap_aqa_accuracy(c("x").as_ptr(), c(" ").as_ptr(), &mut v),
            ApStatus::ErrInvalid
        );
        assert_eq!(
            ap_retrieval_f1([0, 1, 2].as_ptr(), 3, [0, 1].as_ptr(), 2, 3, &mut v),
            ApStatus::Ok
        );
        assert!((v - 0.8).abs() < 1e-12);
        assert_eq!(
            ap_retrieval_f1(ptr::null(), 0, ptr::null(), 0, 4, &mut v),
            ApStatus::Ok
        );
        assert_eq!(v, 1.0);
        assert_eq!(
            ap_retrieval_f1([5].as_ptr(), 1, ptr::null(), 0, 3, &mut v),
            ApStatus::ErrInvalid
        );
        assert_eq!(
            ap_retrieval_f1(ptr::null(), 2, ptr::null(), 0, 3, &mut v),
            ApStatus::ErrNull
        );

        let mut s = ptr::null_mut();
        assert_eq!(
            ap_noise_inject(c("hello").as_ptr(), 1.0, 4, &mut s),
            ApStatus::Ok
        );
        let noisy = take(s);
        assert_eq!(noisy.chars().count(), 5);
        assert!(noisy
            .chars()
            .zip("hello".chars())
            .all(|(a, b)| a != b && a.is_ascii_lowercase()));
        assert_eq!(
            ap_noise_inject(c("hello").as_ptr(), 1.5, 4, &mut s),
            ApStatus::ErrInvalid
        );
    }
}

#[test]
fn last_error_is_per_thread() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            ap_kb_from_text(c("").as_ptr(), &mut out),
            ApStatus::ErrInvalid
        );
    }
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(!last_error().is_empty());
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn have(tool: &str) -> bool {
    Command::new(tool)
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

/// Compiles the C smoke program against the generated header and the
/// static library, then runs it.
#[test]
fn header_compiles_and_links_from_c() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/audiopedia.h");
    assert!(header.exists(), "header is generated by the build script");
    let lib = target_dir().join("libaudiopedia_ffi.a");
    if !have("cc") || !lib.exists() {
        eprintln!("skipping C link check: cc or {} unavailable", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke test failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
