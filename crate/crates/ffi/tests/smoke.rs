//! Drives the C ABI end to end from Rust: synth → train → encode → eval,
//! plus the error-reporting contract.

use schgan_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn last_error() -> String {
    let ptr = schgan_last_error_message();
    if ptr.is_null() {
        return String::new();
    }
    let msg = CStr::from_ptr(ptr).to_string_lossy().into_owned();
    schgan_string_free(ptr);
    msg
}

const SYNTH_JSON: &str = r#"{
    "num_classes": 3, "latent_dim": 4,
    "image_dim": 8, "text_dim": 6,
    "noise": 0.08,
    "labeled": 24, "unlabeled": 40, "query": 10,
    "seed": 5, "name": "ffi-test"
}"#;

const MODEL_JSON: &str =
    r#"{ "image_input_dim": 8, "text_input_dim": 6, "inter_dim": 16, "code_len": 8 }"#;

const TRAIN_JSON: &str = r#"{
    "epochs_outer": 2, "batch_size": 8,
    "samples_per_query": 3, "candidate_pool_size": 12,
    "seed": 11
}"#;

#[test]
fn version_is_exposed() {
    let v = unsafe { CStr::from_ptr(schgan_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn full_pipeline_through_the_c_abi() {
    unsafe {
        // synthesize (also exercising the optional on-disk write)
        let dir = tempfile::TempDir::new().unwrap();
        let out_dir = c(dir.path().to_str().unwrap());
        let mut ds: *mut SchganDataset = ptr::null_mut();
        let status = schgan_dataset_synth(c(SYNTH_JSON).as_ptr(), out_dir.as_ptr(), &mut ds);
        assert_eq!(status, SchganStatus::Ok, "{}", last_error());
        assert_eq!(schgan_dataset_database_size(ds), 64);
        assert_eq!(schgan_dataset_query_count(ds), 10);
        assert!(dir.path().join("manifest.json").exists());

        // the written dataset loads back through the ABI too
        let manifest = c(dir.path().join("manifest.json").to_str().unwrap());
        let mut ds2: *mut SchganDataset = ptr::null_mut();
        let status = schgan_dataset_load(manifest.as_ptr(), &mut ds2);
        assert_eq!(status, SchganStatus::Ok, "{}", last_error());
        assert_eq!(schgan_dataset_database_size(ds2), 64);
        schgan_dataset_free(ds2);

        // train
        let mut model: *mut SchganModel = ptr::null_mut();
        let status = schgan_train(
            ds,
            c(MODEL_JSON).as_ptr(),
            c(TRAIN_JSON).as_ptr(),
            &mut model,
        );
        assert_eq!(status, SchganStatus::Ok, "{}", last_error());
        assert_eq!(schgan_model_code_bits(model), 8);
        assert_eq!(schgan_model_input_dim(model, SchganModality::Image), 8);
        assert_eq!(schgan_model_input_dim(model, SchganModality::Text), 6);

        // save → load round trip
        let ckpt_path = dir.path().join("model.ckpt");
        let ckpt_c = c(ckpt_path.to_str().unwrap());
        assert_eq!(schgan_model_save(model, ckpt_c.as_ptr()), SchganStatus::Ok);
        let mut reloaded: *mut SchganModel = ptr::null_mut();
        assert_eq!(
            schgan_model_load(ckpt_c.as_ptr(), &mut reloaded),
            SchganStatus::Ok
        );

        // encode one image feature with both handles; codes must agree
        let feat: Vec<f64> = vec![0.5, -0.25, 1.0, 0.0, 0.75, -1.0, 0.3, 0.9];
        let mut code_a = [0u8; 1];
        let mut code_b = [0u8; 1];
        for (handle, buf) in [(model, &mut code_a), (reloaded, &mut code_b)] {
            let status = schgan_encode(
                handle,
                SchganModality::Image,
                feat.as_ptr(),
                feat.len(),
                buf.as_mut_ptr(),
                buf.len(),
            );
            assert_eq!(status, SchganStatus::Ok, "{}", last_error());
        }
        assert_eq!(code_a, code_b);
        assert_eq!(schgan_hamming(8, code_a.as_ptr(), code_b.as_ptr()), 0);

        // evaluate both directions, parse the JSON report
        let mut json_ptr: *mut std::ffi::c_char = ptr::null_mut();
        let status = schgan_evaluate(model, ds, SchganDirection::Both, &mut json_ptr);
        assert_eq!(status, SchganStatus::Ok, "{}", last_error());
        let json = CStr::from_ptr(json_ptr).to_str().unwrap().to_owned();
        schgan_string_free(json_ptr);
        let report: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(report["directions"].as_array().unwrap().len(), 2);
        assert_eq!(report["code_len"], 8);

        schgan_model_free(reloaded);
        schgan_model_free(model);
        schgan_dataset_free(ds);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        // NULL argument
        let status = schgan_dataset_load(ptr::null(), ptr::null_mut());
        assert_eq!(status, SchganStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        // data error with a message
        let mut ds: *mut SchganDataset = ptr::null_mut();
        let status = schgan_dataset_load(c("/nonexistent/manifest.json").as_ptr(), &mut ds);
        assert_ne!(status, SchganStatus::Ok);
        let msg = last_error();
        assert!(msg.contains("manifest.json"), "message was: {msg}");
        // message is consumed on read
        assert!(schgan_last_error_message().is_null());

        // config error from bad JSON
        let mut ds: *mut SchganDataset = ptr::null_mut();
        let status = schgan_dataset_synth(c("{ not json").as_ptr(), ptr::null(), &mut ds);
        assert_eq!(status, SchganStatus::ConfigError);

        // invalid synth values are config errors too
        let status = schgan_dataset_synth(c(r#"{"noise": -1.0}"#).as_ptr(), ptr::null(), &mut ds);
        assert_eq!(status, SchganStatus::ConfigError);
        assert!(last_error().contains("noise"));
    }
}

#[test]
fn encode_validates_buffer_sizes() {
    unsafe {
        let mut ds: *mut SchganDataset = ptr::null_mut();
        assert_eq!(
            schgan_dataset_synth(c(SYNTH_JSON).as_ptr(), ptr::null(), &mut ds),
            SchganStatus::Ok
        );
        let mut model: *mut SchganModel = ptr::null_mut();
        assert_eq!(
            schgan_train(ds, c(MODEL_JSON).as_ptr(), c("{}").as_ptr(), &mut model),
            SchganStatus::Ok,
            "{}",
            last_error()
        );

        let feat = [0.0f64; 8];
        let mut code = [0u8; 2]; // wrong: 8 bits need exactly 1 byte
        let status = schgan_encode(
            model,
            SchganModality::Image,
            feat.as_ptr(),
            feat.len(),
            code.as_mut_ptr(),
            code.len(),
        );
        assert_eq!(status, SchganStatus::InvalidArgument);

        // wrong feature dimension
        let short = [0.0f64; 3];
        let mut code = [0u8; 1];
        let status = schgan_encode(
            model,
            SchganModality::Image,
            short.as_ptr(),
            short.len(),
            code.as_mut_ptr(),
            code.len(),
        );
        assert_eq!(status, SchganStatus::InvalidArgument);

        schgan_model_free(model);
        schgan_dataset_free(ds);
    }
}
