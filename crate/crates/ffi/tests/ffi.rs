use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use sinc_asr::checkpoint::save_checkpoint;
use sinc_asr::data::write_wav;
use sinc_asr::model::Model;
use sinc_asr::trainer::transcribe;
use sinc_asr::verify::micro_model_config;
use sinc_asr::vocab::TokenVocabulary;
use sinc_asr::Scalar;
use sinc_asr_ffi::*;

fn tone(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.4 * (i as f64 * 0.07).sin() + 0.1 * (i as f64 * 0.31).cos()).collect()
}

fn write_model<T: Scalar>(dir: &Path, name: &str) -> (PathBuf, Model<T>, TokenVocabulary) {
    let vocab = TokenVocabulary::build(&["ab ba"]).unwrap();
    let mut config = micro_model_config();
    config.vocab_size = vocab.len();
    let model = Model::<T>::build(config, 3).unwrap();
    let path = dir.join(name);
    save_checkpoint(&path, &model, None, &vocab, 1).unwrap();
    (path, model, vocab)
}

fn cstring(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn open(path: &Path) -> *mut SaRecognizer {
    let mut rec = ptr::null_mut();
    assert_eq!(unsafe { sa_recognizer_open(cstring(path).as_ptr(), &mut rec) }, SaStatus::Ok);
    assert!(!rec.is_null());
    rec
}

fn take(text: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    unsafe { sa_string_free(text) };
    out
}

fn last_error() -> String {
    let msg = sa_last_error();
    assert!(!msg.is_null());
    unsafe { CStr::from_ptr(msg) }.to_string_lossy().into_owned()
}

#[test]
fn transcripts_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    // f32 input widened to f64 is exact, so both precisions see the same samples
    let samples: Vec<f64> = tone(2400).iter().map(|&s| s as f32 as f64).collect();
    for double in [false, true] {
        let (path, expected, vocab_size) = if double {
            let (p, m, v) = write_model::<f64>(dir.path(), "d.ckpt");
            (p, transcribe(&m, &samples, 8000, &v).unwrap(), v.len())
        } else {
            let (p, m, v) = write_model::<f32>(dir.path(), "s.ckpt");
            (p, transcribe(&m, &samples, 8000, &v).unwrap(), v.len())
        };
        let rec = open(&path);
        unsafe {
            assert_eq!(sa_recognizer_sample_rate(rec), 8000);
            assert_eq!(sa_recognizer_vocab_size(rec), vocab_size);
            assert_eq!(sa_recognizer_min_samples(rec), micro_model_config().min_samples());
        }
        let floats: Vec<f32> = samples.iter().map(|&s| s as f32).collect();
        let mut text = ptr::null_mut();
        let status = unsafe { sa_recognizer_transcribe(rec, floats.as_ptr(), floats.len(), 8000, &mut text) };
        assert_eq!(status, SaStatus::Ok);
        assert_eq!(take(text), expected);
        unsafe { sa_recognizer_free(rec) };
    }
}

#[test]
fn wav_path_agrees_with_raw_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = write_model::<f64>(dir.path(), "m.ckpt");
    let wav = dir.path().join("a.wav");
    let samples: Vec<f64> = tone(3000).iter().map(|s| (s * 32768.0).round() / 32768.0).collect();
    write_wav(&wav, &samples, 8000).unwrap();
    let rec = open(&path);
    let mut from_file = ptr::null_mut();
    assert_eq!(unsafe { sa_recognizer_transcribe_wav(rec, cstring(&wav).as_ptr(), &mut from_file) }, SaStatus::Ok);
    let floats: Vec<f32> = samples.iter().map(|&s| s as f32).collect();
    let mut from_raw = ptr::null_mut();
    let status = unsafe { sa_recognizer_transcribe(rec, floats.as_ptr(), floats.len(), 8000, &mut from_raw) };
    assert_eq!(status, SaStatus::Ok);
    assert_eq!(take(from_file), take(from_raw));
    unsafe { sa_recognizer_free(rec) };
}

#[test]
fn failures_report_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = ptr::null_mut();
    let missing = cstring(&dir.path().join("nope.ckpt"));
    assert_eq!(unsafe { sa_recognizer_open(missing.as_ptr(), &mut rec) }, SaStatus::Io);
    assert!(rec.is_null());
    assert!(last_error().contains("nope.ckpt"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(unsafe { sa_recognizer_open(cstring(&junk).as_ptr(), &mut rec) }, SaStatus::Checkpoint);
    assert_eq!(unsafe { sa_recognizer_open(ptr::null(), &mut rec) }, SaStatus::NullArgument);
    assert_eq!(unsafe { sa_recognizer_open(missing.as_ptr(), ptr::null_mut()) }, SaStatus::NullArgument);

    let (path, _, _) = write_model::<f32>(dir.path(), "m.ckpt");
    let rec = open(&path);
    let mut text = ptr::null_mut();
    let short = [0.0f32; 100];
    let status = unsafe { sa_recognizer_transcribe(rec, short.as_ptr(), short.len(), 8000, &mut text) };
    assert_eq!(status, SaStatus::InputTooShort);
    assert!(text.is_null());
    let long = vec![0.0f32; 4000];
    let status = unsafe { sa_recognizer_transcribe(rec, long.as_ptr(), long.len(), 16000, &mut text) };
    assert_eq!(status, SaStatus::InvalidArgument);
    assert!(last_error().contains("16000"));
    let status = unsafe { sa_recognizer_transcribe(ptr::null(), long.as_ptr(), long.len(), 8000, &mut text) };
    assert_eq!(status, SaStatus::NullArgument);
    unsafe {
        sa_recognizer_free(rec);
        sa_recognizer_free(ptr::null_mut());
        sa_string_free(ptr::null_mut());
        assert_eq!(sa_recognizer_sample_rate(ptr::null()), 0);
    }
}

#[test]
fn edit_distance_normalizes_text() {
    let mut d = usize::MAX;
    let a = CString::new("Café  au lait").unwrap();
    let b = CString::new("cafe\u{301} au lit").unwrap();
    assert_eq!(unsafe { sa_edit_distance(a.as_ptr(), b.as_ptr(), &mut d) }, SaStatus::Ok);
    assert_eq!(d, 1);
    let bad = [0xffu8 as c_char, 0];
    assert_eq!(unsafe { sa_edit_distance(bad.as_ptr(), b.as_ptr(), &mut d) }, SaStatus::InvalidUtf8);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sa_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sinc_asr.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["sa_recognizer_open", "sa_recognizer_transcribe", "sa_string_free", "SA_STATUS_INPUT_TOO_SHORT"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sinc_asr.h\"\nint main(void) { SaRecognizer *r = 0; SaStatus s = sa_recognizer_open(\"x\", &r); sa_recognizer_free(r); return s == SA_STATUS_OK; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(header.parent().unwrap())
            .arg(&src)
            .output();
        match out {
            Ok(out) => assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr)),
            Err(e) => eprintln!("skipping {compiler} check: {e}"),
        }
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "sinc_asr.h"

int main(int argc, char **argv) {
    SaRecognizer *rec = NULL;
    if (sa_recognizer_open(argv[1], &rec) != SA_STATUS_OK) {
        fprintf(stderr, "%s\n", sa_last_error());
        return 1;
    }
    char *text = NULL;
    SaStatus status = sa_recognizer_transcribe_wav(rec, argv[2], &text);
    if (status != SA_STATUS_OK) {
        fprintf(stderr, "%s\n", sa_last_error());
        return 2;
    }
    printf("%s|%u|%s\n", sa_version(), sa_recognizer_sample_rate(rec), text);
    sa_string_free(text);
    sa_recognizer_free(rec);
    if (sa_recognizer_open("/nonexistent.ckpt", &rec) != SA_STATUS_IO || rec != NULL) return 3;
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    // integration tests live in target/<profile>/deps, next to the library output dir
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap();
    let archive = lib_dir.join("libsinc_asr_ffi.a");
    if !archive.exists() || !cfg!(target_os = "linux") {
        eprintln!("skipping: {} not built", archive.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let cc = std::process::Command::new("cc")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output();
    let cc = match cc {
        Ok(out) => out,
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    };
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));

    let (ckpt, model, vocab) = write_model::<f64>(dir.path(), "m.ckpt");
    let samples: Vec<f64> = tone(3000).iter().map(|s| (s * 32768.0).round() / 32768.0).collect();
    let wav = dir.path().join("a.wav");
    write_wav(&wav, &samples, 8000).unwrap();
    let expected = transcribe(&model, &samples, 8000, &vocab).unwrap();

    let run = std::process::Command::new(&bin).arg(&ckpt).arg(&wav).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.trim_end_matches('\n'), format!("{}|8000|{expected}", env!("CARGO_PKG_VERSION")));
}
