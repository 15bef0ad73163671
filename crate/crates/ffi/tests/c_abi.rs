use std::ffi::{CStr, CString};
use std::ptr;

use tmaxer_ffi::*;

fn last_error() -> String {
    let p = tmx_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> TmxModelConfig {
    let mut cfg = TmxModelConfig {
        input_dim: 0,
        embed_dim: 0,
        num_levels: 0,
        tcm_variant: 0,
        tcm_kernel: 0,
        num_classes: 0,
        head_kernel: 0,
    };
    assert_eq!(unsafe { tmx_model_config_default(&mut cfg) }, TmxStatus::Ok);
    cfg.input_dim = 4;
    cfg.embed_dim = 8;
    cfg.num_classes = 2;
    cfg
}

#[test]
fn model_lifecycle_and_inference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { tmx_model_new(&cfg, 3, &mut model) }, TmxStatus::Ok);

    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tmx_model_save(model, path.as_ptr()) }, TmxStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { tmx_model_load(path.as_ptr(), &mut loaded) }, TmxStatus::Ok);
    let mut back = small_config();
    back.embed_dim = 0;
    assert_eq!(unsafe { tmx_model_config(loaded, &mut back) }, TmxStatus::Ok);
    assert_eq!(back, cfg);

    let (mut p0, mut p1) = (0u64, 0u64);
    unsafe {
        assert_eq!(tmx_model_count_params(model, &mut p0), TmxStatus::Ok);
        assert_eq!(tmx_model_count_params(loaded, &mut p1), TmxStatus::Ok);
    }
    assert_eq!(p0, p1);
    assert!(p0 > 0);

    let data: Vec<f64> = (0..32 * 4).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
    let mut feats = ptr::null_mut();
    assert_eq!(
        unsafe { tmx_features_new(data.as_ptr(), 32, 4, &mut feats) },
        TmxStatus::Ok
    );
    let (mut r, mut c) = (0u64, 0u64);
    assert_eq!(unsafe { tmx_features_shape(feats, &mut r, &mut c) }, TmxStatus::Ok);
    assert_eq!((r, c), (32, 4));

    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(tmx_infer(model, feats, ptr::null(), &mut a), TmxStatus::Ok);
        assert_eq!(tmx_infer(loaded, feats, ptr::null(), &mut b), TmxStatus::Ok);
    }
    let (mut na, mut nb) = (0u64, 0u64);
    unsafe {
        tmx_segments_len(a, &mut na);
        tmx_segments_len(b, &mut nb);
    }
    assert_eq!(na, nb);
    assert!(na > 0);
    let mut prev = f64::INFINITY;
    for i in 0..na {
        let mut sa = TmxSegment {
            start: 0.0,
            end: 0.0,
            score: 0.0,
            label: 0,
        };
        let mut sb = sa;
        unsafe {
            assert_eq!(tmx_segments_get(a, i, &mut sa), TmxStatus::Ok);
            assert_eq!(tmx_segments_get(b, i, &mut sb), TmxStatus::Ok);
        }
        assert_eq!(sa, sb);
        assert!(sa.start < sa.end && sa.score <= prev);
        prev = sa.score;
    }
    let mut s = TmxSegment {
        start: 0.0,
        end: 0.0,
        score: 0.0,
        label: 0,
    };
    assert_eq!(unsafe { tmx_segments_get(a, na, &mut s) }, TmxStatus::OutOfRange);
    assert!(last_error().contains("out of range"));

    unsafe {
        tmx_segments_free(a);
        tmx_segments_free(b);
        tmx_features_free(feats);
        tmx_model_free(model);
        tmx_model_free(loaded);
        tmx_model_free(ptr::null_mut());
    }
}

#[test]
fn error_codes() {
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { tmx_model_new(ptr::null(), 0, &mut model) },
        TmxStatus::NullPointer
    );
    assert!(last_error().contains("config is null"));

    let mut cfg = small_config();
    cfg.tcm_variant = 99;
    assert_eq!(
        unsafe { tmx_model_new(&cfg, 0, &mut model) },
        TmxStatus::InvalidArgument
    );
    cfg = small_config();
    cfg.num_levels = 1;
    assert_ne!(unsafe { tmx_model_new(&cfg, 0, &mut model) }, TmxStatus::Ok);

    let missing = CString::new("/nonexistent/dir/m.ckpt").unwrap();
    assert_eq!(unsafe { tmx_model_load(missing.as_ptr(), &mut model) }, TmxStatus::Io);
    assert!(last_error().contains("/nonexistent/dir/m.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tmxf");
    std::fs::write(&bad, b"TMXF\x01\0\0\0\x02\0\0\0\x03\0\0\0\0\0").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    let mut feats = ptr::null_mut();
    assert_eq!(
        unsafe { tmx_features_read(bad.as_ptr(), &mut feats) },
        TmxStatus::Format
    );
    assert!(last_error().contains("expected 24 bytes"));

    let nan = [f64::NAN];
    assert_eq!(
        unsafe { tmx_features_new(nan.as_ptr(), 1, 1, &mut feats) },
        TmxStatus::NonFinite
    );

    // too short for a 4-level pyramid
    let cfg = small_config();
    assert_eq!(unsafe { tmx_model_new(&cfg, 0, &mut model) }, TmxStatus::Ok);
    let data = [0.5; 4 * 4];
    assert_eq!(
        unsafe { tmx_features_new(data.as_ptr(), 4, 4, &mut feats) },
        TmxStatus::Ok
    );
    let mut segs = ptr::null_mut();
    assert_eq!(
        unsafe { tmx_infer(model, feats, ptr::null(), &mut segs) },
        TmxStatus::InvalidArgument
    );
    assert!(segs.is_null());
    unsafe {
        tmx_features_free(feats);
        tmx_model_free(model);
    }
}

#[test]
fn macs_and_tiou() {
    let mut counts = Vec::new();
    for variant in [TMX_TCM_MAXPOOL, TMX_TCM_SUBSAMPLE, TMX_TCM_CONV] {
        let mut cfg = small_config();
        cfg.tcm_variant = variant;
        let mut model = ptr::null_mut();
        let (mut params, mut macs) = (0u64, 0u64);
        unsafe {
            assert_eq!(tmx_model_new(&cfg, 0, &mut model), TmxStatus::Ok);
            assert_eq!(tmx_model_count_params(model, &mut params), TmxStatus::Ok);
            assert_eq!(tmx_model_count_macs(model, 2304, &mut macs), TmxStatus::Ok);
            tmx_model_free(model);
        }
        counts.push((params, macs));
    }
    assert_eq!(counts[0], counts[1]);
    assert!(counts[0].0 < counts[2].0 && counts[0].1 < counts[2].1);
    assert!((tmx_tiou(0.0, 10.0, 5.0, 15.0) - 1.0 / 3.0).abs() < 1e-15);
    let v = unsafe { CStr::from_ptr(tmx_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn default_infer_options_match_library() {
    let mut o = TmxInferOptions {
        score_threshold: 0.0,
        pre_nms_topk: 0,
        clip_to_video: 0,
        hard_nms: 1,
        sigma: 0.0,
        min_score: 0.0,
        iou_threshold: 0.0,
        max_segments: 0,
    };
    assert_eq!(unsafe { tmx_infer_options_default(&mut o) }, TmxStatus::Ok);
    assert_eq!((o.sigma, o.max_segments, o.hard_nms), (0.5, 200, 0));
}
