use std::ffi::{CStr, CString};
use std::ptr;

use chorus::features::{MelParams, Normalization};
use chorus::nn::{Network, NetworkConfig};
use chorus::training::{save_checkpoint, Classifier};
use chorus_ffi::*;

fn checkpoint(dir: &std::path::Path) -> CString {
    let mel = MelParams {
        n_mels: 16,
        ..MelParams::default()
    };
    let net = Network::<f32>::new(NetworkConfig::micro(3, 16), 4).unwrap();
    let names = vec!["alpha".to_string(), "beta".into(), "gamma".into()];
    let model = Classifier::new(net, names, mel, Normalization::PerSpectrogram).unwrap();
    let path = dir.join("m.chkp");
    save_checkpoint(&model, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(chorus_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn classifier_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint(dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(chorus_classifier_load(path.as_ptr(), &mut h), ChorusStatus::Ok);
        let mut k = 0usize;
        assert_eq!(chorus_classifier_num_classes(h, &mut k), ChorusStatus::Ok);
        assert_eq!(k, 3);
        let mut rate = 0u32;
        assert_eq!(chorus_classifier_sample_rate(h, &mut rate), ChorusStatus::Ok);
        assert_eq!(rate, 16000);
        let mut name = ptr::null();
        assert_eq!(chorus_classifier_class_name(h, 1, &mut name), ChorusStatus::Ok);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "beta");
        assert_eq!(chorus_classifier_class_name(h, 3, &mut name), ChorusStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        let samples: Vec<f32> = (0..16000).map(|i| ((i as f32) * 0.2).sin() * 0.3).collect();
        let mut probs = [0.0f64; 3];
        let mut pred = usize::MAX;
        let st = chorus_classifier_classify_pcm(h, samples.as_ptr(), samples.len(), 16000, probs.as_mut_ptr(), 3, &mut pred);
        assert_eq!(st, ChorusStatus::Ok, "{}", last_error());
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(pred < 3);
        assert_eq!(
            chorus_classifier_classify_pcm(h, samples.as_ptr(), samples.len(), 16000, probs.as_mut_ptr(), 2, &mut pred),
            ChorusStatus::BufferTooSmall
        );
        assert_eq!(
            chorus_classifier_classify_pcm(h, samples.as_ptr(), samples.len(), 8000, probs.as_mut_ptr(), 3, &mut pred),
            ChorusStatus::InvalidArgument
        );
        chorus_classifier_free(h);
        chorus_classifier_free(ptr::null_mut());
    }
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    let missing = CString::new(dir.path().join("nope.chkp").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(chorus_classifier_load(missing.as_ptr(), &mut h), ChorusStatus::Io);
        assert!(h.is_null());
        let bad = dir.path().join("bad.chkp");
        std::fs::write(&bad, b"XXXXjunk").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(chorus_classifier_load(bad.as_ptr(), &mut h), ChorusStatus::BadFormat);
        assert!(last_error().contains("magic"));
        assert_eq!(chorus_classifier_load(ptr::null(), &mut h), ChorusStatus::NullPointer);
    }
}

#[test]
fn significance_tests() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.0; 5];
    let mut r = ChorusSignificance {
        statistic: 0.0,
        p_value: 0.0,
        n: 0,
        degenerate: 0,
    };
    unsafe {
        assert_eq!(chorus_paired_t_test(a.as_ptr(), b.as_ptr(), 5, &mut r), ChorusStatus::Ok);
        assert!((r.statistic - 4.242640687119285).abs() < 1e-9);
        assert!((r.p_value - 0.013235599563682690).abs() < 1e-9);
        assert_eq!(chorus_wilcoxon_signed_rank(a.as_ptr(), b.as_ptr(), 5, &mut r), ChorusStatus::Ok);
        assert_eq!((r.statistic, r.p_value, r.n), (15.0, 0.0625, 5));
        assert_eq!(chorus_paired_t_test(a.as_ptr(), a.as_ptr(), 5, &mut r), ChorusStatus::Ok);
        assert_eq!((r.p_value, r.degenerate), (1.0, 1));
        assert_eq!(chorus_paired_t_test(a.as_ptr(), b.as_ptr(), 1, &mut r), ChorusStatus::InvalidArgument);
    }
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(chorus_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/chorus.h")).unwrap();
    for sym in [
        "chorus_classifier_load",
        "chorus_classifier_free",
        "chorus_classifier_classify_pcm",
        "chorus_paired_t_test",
        "chorus_wilcoxon_signed_rank",
        "CHORUS_STATUS_OK",
        "typedef struct ChorusClassifier ChorusClassifier",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
