use std::ffi::{c_char, CStr, CString};
use std::ptr;

use segrl_ffi::*;

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { segrl_string_free(p) };
    s
}

fn last_error() -> String {
    let p = segrl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(segrl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn iou_and_errors() {
    let a = [1u8, 1, 0, 0];
    let b = [0u8, 1, 1, 0];
    let mut out = 0.0;
    assert_eq!(unsafe { segrl_iou(a.as_ptr(), b.as_ptr(), 2, 2, &mut out) }, SEGRL_OK);
    assert!((out - 1.0 / 3.0).abs() < 1e-15);
    assert!(segrl_last_error().is_null());

    let rc = unsafe { segrl_iou(ptr::null(), b.as_ptr(), 2, 2, &mut out) };
    assert_eq!(rc, SEGRL_ERR_NULL_POINTER);
    assert!(last_error().contains("a is NULL"));

    let rc = unsafe { segrl_iou(a.as_ptr(), b.as_ptr(), 0, 2, &mut out) };
    assert_eq!(rc, SEGRL_ERR_INVALID_ARGUMENT);
}

#[test]
fn rle_round_trip_and_small_buffer() {
    let (w, h) = (3u32, 2u32);
    let mask = [0u8, 1, 1, 1, 0, 7];
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { segrl_rle_encode(mask.as_ptr(), w, h, &mut json) }, SEGRL_OK);
    let json = take_string(json);
    // Column-major: col0 = [0,1], col1 = [1,0], col2 = [1,1].
    assert_eq!(json, r#"{"size":[2,3],"counts":[1,2,1,2]}"#);

    let c = CString::new(json).unwrap();
    let mut out = [9u8; 6];
    let (mut ow, mut oh) = (0u32, 0u32);
    let rc = unsafe { segrl_rle_decode(c.as_ptr(), out.as_mut_ptr(), out.len(), &mut ow, &mut oh) };
    assert_eq!(rc, SEGRL_OK);
    assert_eq!((ow, oh), (w, h));
    assert_eq!(out, [0, 1, 1, 1, 0, 1]);

    let rc = unsafe { segrl_rle_decode(c.as_ptr(), out.as_mut_ptr(), 5, &mut ow, &mut oh) };
    assert_eq!(rc, SEGRL_ERR_BUFFER_TOO_SMALL);
    assert_eq!((ow, oh), (w, h));

    let bad = CString::new(r#"{"size":[2,3],"counts":[1,2]}"#).unwrap();
    let rc = unsafe { segrl_rle_decode(bad.as_ptr(), out.as_mut_ptr(), 6, &mut ow, &mut oh) };
    assert_eq!(rc, SEGRL_ERR_PARSE);
    assert!(last_error().contains("counts sum"));
    let rc = unsafe { segrl_rle_decode(c"not json".as_ptr(), out.as_mut_ptr(), 6, &mut ow, &mut oh) };
    assert_eq!(rc, SEGRL_ERR_PARSE);
}

#[test]
fn objective_pieces() {
    let r = [1.0, 2.0, 3.0, 4.0];
    let mut adv = [0.0; 4];
    assert_eq!(
        unsafe { segrl_compute_advantages(r.as_ptr(), 4, 1e-8, adv.as_mut_ptr()) },
        SEGRL_OK
    );
    assert!((adv.iter().sum::<f64>()).abs() < 1e-12);
    assert!(adv[3] > 0.0 && adv[0] < 0.0);
    let rc = unsafe { segrl_compute_advantages(r.as_ptr(), 0, 1e-8, adv.as_mut_ptr()) };
    assert_eq!(rc, SEGRL_ERR_INVALID_ARGUMENT);

    let mut kl = -1.0;
    assert_eq!(unsafe { segrl_kl_term(0.0, 2f64.ln(), &mut kl) }, SEGRL_OK);
    assert!((kl - (1.0 - 2f64.ln())).abs() < 1e-12);

    let (mut v, mut clipped) = (0.0, false);
    assert_eq!(
        unsafe { segrl_surrogate_token(1.5, 1.0, 0.2, 0.3, &mut v, &mut clipped) },
        SEGRL_OK
    );
    assert!((v - 1.3).abs() < 1e-12 && clipped);
    assert_eq!(
        unsafe { segrl_surrogate_token(1.1, 1.0, 0.2, 0.3, &mut v, ptr::null_mut()) },
        SEGRL_OK
    );
    assert!((v - 1.1).abs() < 1e-12);
}

#[test]
fn reward_config_and_tiers() {
    let mut score = -1;
    assert_eq!(
        unsafe { segrl_tiered_accuracy_reward(0.75, ptr::null(), &mut score) },
        SEGRL_OK
    );
    assert_eq!(score, 3);
    assert_eq!(
        unsafe { segrl_tiered_accuracy_reward(1.5, ptr::null(), &mut score) },
        SEGRL_ERR_INVALID_ARGUMENT
    );

    let mut cfg = ptr::null_mut();
    let json = cr#"{"accuracy_mode":{"kind":"fixed","threshold":0.7}}"#;
    assert_eq!(
        unsafe { segrl_reward_config_from_json(json.as_ptr(), &mut cfg) },
        SEGRL_OK
    );
    assert_eq!(unsafe { segrl_tiered_accuracy_reward(0.75, cfg, &mut score) }, SEGRL_OK);
    assert_eq!(score, 4);
    assert_eq!(unsafe { segrl_tiered_accuracy_reward(0.65, cfg, &mut score) }, SEGRL_OK);
    assert_eq!(score, 0);
    unsafe { segrl_reward_config_free(cfg) };

    let mut cfg = ptr::null_mut();
    let rc = unsafe { segrl_reward_config_from_json(c"{\"nope\":1}".as_ptr(), &mut cfg) };
    assert_ne!(rc, SEGRL_OK);
    assert!(cfg.is_null());
    unsafe { segrl_reward_config_free(ptr::null_mut()) };
}

fn generated_task() -> *mut SegrlTask {
    let mut task = ptr::null_mut();
    assert_eq!(unsafe { segrl_task_generate(0, 0, &mut task) }, SEGRL_OK);
    task
}

#[test]
fn task_json_round_trip_and_reward() {
    let task = generated_task();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { segrl_task_to_json(task, &mut json) }, SEGRL_OK);
    let json = take_string(json);
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["id"], "task_00000");

    let c = CString::new(json).unwrap();
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { segrl_task_from_json(c.as_ptr(), &mut again) }, SEGRL_OK);

    let mut out = ptr::null_mut();
    let rc = unsafe { segrl_total_reward(c"no tags".as_ptr(), again, ptr::null(), &mut out) };
    assert_eq!(rc, SEGRL_OK);
    let b: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(b["total"], 0);
    assert_eq!(b["reason"], "missing think/answer");

    let rc = unsafe { segrl_total_reward(c"x".as_ptr(), ptr::null(), ptr::null(), &mut out) };
    assert_eq!(rc, SEGRL_ERR_NULL_POINTER);

    unsafe {
        segrl_task_free(task);
        segrl_task_free(again);
        segrl_task_free(ptr::null_mut());
    }
}

#[test]
fn trainer_steps_saves_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cr#"{"iterations":3,"dataset_size":40,"seed":5}"#;
    let mut trainer = ptr::null_mut();
    assert_eq!(unsafe { segrl_trainer_new(cfg.as_ptr(), &mut trainer) }, SEGRL_OK);

    let mut metrics = ptr::null_mut();
    assert_eq!(unsafe { segrl_trainer_step(trainer, &mut metrics) }, SEGRL_OK);
    let m: serde_json::Value = serde_json::from_str(&take_string(metrics)).unwrap();
    assert_eq!(m["iteration"], 1);
    assert_eq!(unsafe { segrl_trainer_step(trainer, ptr::null_mut()) }, SEGRL_OK);

    let path = CString::new(dir.path().join("ck.json").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { segrl_trainer_save_checkpoint(trainer, path.as_ptr()) },
        SEGRL_OK
    );
    assert_eq!(unsafe { segrl_trainer_step(trainer, &mut metrics) }, SEGRL_OK);
    let direct = take_string(metrics);
    let mut done = false;
    assert_eq!(unsafe { segrl_trainer_is_done(trainer, &mut done) }, SEGRL_OK);
    assert!(done);
    unsafe { segrl_trainer_free(trainer) };

    let mut resumed = ptr::null_mut();
    assert_eq!(
        unsafe { segrl_trainer_from_checkpoint(path.as_ptr(), &mut resumed) },
        SEGRL_OK
    );
    assert_eq!(unsafe { segrl_trainer_step(resumed, &mut metrics) }, SEGRL_OK);
    assert_eq!(take_string(metrics), direct);
    unsafe { segrl_trainer_free(resumed) };

    let mut ckpt = ptr::null_mut();
    assert_eq!(unsafe { segrl_checkpoint_load(path.as_ptr(), &mut ckpt) }, SEGRL_OK);
    let task = generated_task();
    let mut text = ptr::null_mut();
    assert_eq!(
        unsafe { segrl_checkpoint_greedy_response(ckpt, task, &mut text) },
        SEGRL_OK
    );
    let text = take_string(text);
    assert!(!text.contains('\0'));

    let data_dir = dir.path().join("data");
    let train_cfg = segrl::train::TrainConfig {
        dataset_size: 40,
        seed: 5,
        ..Default::default()
    };
    segrl::train::gen_dataset(&train_cfg, &data_dir, false).unwrap();
    let data = CString::new(data_dir.to_str().unwrap()).unwrap();
    let mut report = ptr::null_mut();
    let rc = unsafe { segrl_checkpoint_evaluate(ckpt, data.as_ptr(), c"eval".as_ptr(), &mut report) };
    assert_eq!(rc, SEGRL_OK);
    let r: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
    assert_eq!(r["num_tasks"], 4);

    let rc = unsafe { segrl_checkpoint_evaluate(ckpt, path.as_ptr(), c"eval".as_ptr(), &mut report) };
    assert_eq!(rc, SEGRL_ERR_IO);
    let rc = unsafe { segrl_checkpoint_evaluate(ckpt, data.as_ptr(), c"dev".as_ptr(), &mut report) };
    assert_eq!(rc, SEGRL_ERR_CONFIG);
    unsafe {
        segrl_checkpoint_free(ckpt);
        segrl_task_free(task);
    }
}

#[test]
fn bad_trainer_config_reports_config_error() {
    let mut trainer = ptr::null_mut();
    let rc = unsafe { segrl_trainer_new(cr#"{"group_size":1,"bogus":2}"#.as_ptr(), &mut trainer) };
    assert_eq!(rc, SEGRL_ERR_CONFIG);
    assert!(last_error().contains("bogus"));
    assert!(trainer.is_null());
    let rc = unsafe { segrl_trainer_new(cr#"{"group_size":1}"#.as_ptr(), &mut trainer) };
    assert_eq!(rc, SEGRL_ERR_CONFIG);
}
