use std::ffi::{c_char, CString};
use std::ptr;

use airfl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; airfl_last_error_length() + 1];
    let n = unsafe { airfl_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    String::from_utf8(buf[..n].to_vec()).unwrap()
}

fn set(cfg: *mut AirflConfig, key: &str, value: &str) -> AirflStatus {
    let (k, v) = (CString::new(key).unwrap(), CString::new(value).unwrap());
    unsafe { airfl_config_set(cfg, k.as_ptr(), v.as_ptr()) }
}

#[test]
fn experiment_round_trip() {
    let cfg = airfl_config_default();
    assert_eq!(set(cfg, "trials", "2"), AirflStatus::Ok);
    assert_eq!(set(cfg, "rounds", "5"), AirflStatus::Ok);
    assert_eq!(set(cfg, "scheme", "\"clip\""), AirflStatus::Ok);
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { airfl_run_experiment(cfg, &mut res) }, AirflStatus::Ok);
    unsafe {
        assert_eq!(airfl_result_trials(res), 2);
        assert_eq!(airfl_result_rounds(res, 1), 5);
        assert_eq!(airfl_result_rounds(res, 9), 0);
        let mut loss = f64::NAN;
        assert_eq!(airfl_result_metric(res, 1, 4, AirflMetric::TrainLoss, &mut loss), AirflStatus::Ok);
        let (mut mean, mut se) = (0.0, 0.0);
        assert_eq!(airfl_result_final_loss(res, &mut mean, &mut se), AirflStatus::Ok);
        assert!(loss.is_finite() && mean.is_finite() && se >= 0.0);
        let mut eps = 0.0;
        assert_eq!(airfl_result_metric(res, 0, 0, AirflMetric::DpEps, &mut eps), AirflStatus::Ok);
        assert!(eps.is_infinite(), "noiseless scheme has no finite guarantee");
        assert_eq!(airfl_result_metric(res, 0, 5, AirflMetric::Mse, &mut eps), AirflStatus::Config);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
        assert_eq!(airfl_result_write_csv(res, path.as_ptr()), AirflStatus::Ok);
        assert!(dir.path().join("out/rounds.csv").exists());
        airfl_result_free(res);
        airfl_config_free(cfg);
    }
}

#[test]
fn invalid_settings_are_rejected_without_side_effects() {
    let cfg = airfl_config_default();
    assert_eq!(set(cfg, "m", "2"), AirflStatus::Config);
    assert!(!last_error().is_empty());
    assert_eq!(set(cfg, "no_such_field", "1"), AirflStatus::Config);
    assert_eq!(set(cfg, "snr", "not toml"), AirflStatus::Config);
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { airfl_run_experiment(cfg, &mut res) }, AirflStatus::Ok, "{}", last_error());
    assert!(last_error().is_empty());
    unsafe {
        airfl_result_free(res);
        airfl_config_free(cfg);
    }
}

#[test]
fn toml_parsing_and_utf8_errors() {
    let mut cfg = ptr::null_mut();
    let good = CString::new("n = 4\nm = 6\nrounds = 3\n").unwrap();
    assert_eq!(unsafe { airfl_config_from_toml(good.as_ptr(), &mut cfg) }, AirflStatus::Ok);
    unsafe { airfl_config_free(cfg) };
    let bad = CString::new("n = \"four\"").unwrap();
    assert_eq!(unsafe { airfl_config_from_toml(bad.as_ptr(), &mut cfg) }, AirflStatus::Config);
    let invalid = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { airfl_config_from_toml(invalid.as_ptr().cast::<c_char>(), &mut cfg) },
        AirflStatus::InvalidUtf8
    );
    assert_eq!(unsafe { airfl_config_from_toml(ptr::null(), &mut cfg) }, AirflStatus::NullPointer);
    let missing = CString::new("/nonexistent/airfl.toml").unwrap();
    assert_eq!(unsafe { airfl_config_load(missing.as_ptr(), &mut cfg) }, AirflStatus::Io);
}

#[test]
fn zero_forcing_aligns_every_device() {
    // two devices, three antennas, interleaved column-major
    let h = [1.0, 0.5, -0.3, 0.2, 0.7, -1.1, 0.4, 0.0, -0.6, 0.9, 1.3, 0.1];
    let (m, k, clip, dim, power) = (3, 2, 0.8, 10, 0.01);
    let mut w = [0.0; 6];
    assert_eq!(unsafe { airfl_zf_combiner(h.as_ptr(), m, k, clip, dim, power, w.as_mut_ptr()) }, AirflStatus::Ok);
    let target = clip / (dim as f64 * power).sqrt();
    for col in h.chunks_exact(2 * m) {
        // wᴴh
        let (mut re, mut im) = (0.0, 0.0);
        for (wi, hi) in w.chunks_exact(2).zip(col.chunks_exact(2)) {
            re += wi[0] * hi[0] + wi[1] * hi[1];
            im += wi[0] * hi[1] - wi[1] * hi[0];
        }
        assert!(((re * re + im * im).sqrt() - target).abs() < 1e-12 * target);
    }
    // more devices than antennas
    assert_eq!(unsafe { airfl_zf_combiner(h.as_ptr(), 2, 3, clip, dim, power, w.as_mut_ptr()) }, AirflStatus::Config);
    let collinear = [1.0, 0.0, 2.0, 0.0, 2.0, 0.0, 4.0, 0.0];
    assert_eq!(
        unsafe { airfl_zf_combiner(collinear.as_ptr(), 2, 2, clip, dim, power, w.as_mut_ptr()) },
        AirflStatus::Numerical
    );
}

#[test]
fn allocation_and_accounting() {
    let pi = [1.0, 3.0];
    let mut q = [0.0; 2];
    let (mut scaled, mut mu) = (false, 0.0);
    assert_eq!(
        unsafe { airfl_solve_allocation(pi.as_ptr(), 2, 0.5, q.as_mut_ptr(), &mut scaled, &mut mu) },
        AirflStatus::Ok
    );
    assert!(scaled && mu > 0.0);
    assert!((q[0] - 1.0 / (0.5f64 - 1.0 / 9.0).sqrt()).abs() < 1e-9 && q[1] == 3.0);
    assert_eq!(
        unsafe { airfl_solve_allocation(pi.as_ptr(), 2, 10.0, q.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) },
        AirflStatus::Ok
    );
    assert_eq!(q, pi);
    assert_eq!(
        unsafe { airfl_solve_allocation(ptr::null(), 2, 1.0, q.as_mut_ptr(), &mut scaled, &mut mu) },
        AirflStatus::NullPointer
    );

    let (delta, r, clip, sigma2) = (1e-5, 1.0, 0.5, 0.2);
    let mut c_delta = 0.0;
    let mut eps = 0.0;
    unsafe {
        assert_eq!(airfl_resolve_c_delta(3.0, delta, r, clip, sigma2, &mut c_delta), AirflStatus::Ok);
        assert_eq!(airfl_dp_epsilon(3.0, delta, c_delta, r, clip, sigma2, &mut eps), AirflStatus::Ok);
        let alpha = 1.0 + 2.0 * (1.0 / delta).ln() / eps;
        let mut via = 0.0;
        assert_eq!(airfl_rdp_to_dp(alpha, eps / 2.0, delta, &mut via), AirflStatus::Ok);
        assert!((via - eps).abs() < 1e-9 * eps);
        let mut a = 0.0;
        assert_eq!(airfl_privacy_budget_a(eps, delta, c_delta, r, clip, sigma2, &mut a), AirflStatus::Ok);
        // the budget is exactly the cost that spends ε
        assert!((a - 3.0).abs() < 1e-9 * 3.0, "{a}");
        assert_eq!(airfl_dp_epsilon(3.0, delta, 1.0, r, clip, sigma2, &mut eps), AirflStatus::Config);
        assert!(last_error().contains("c_delta"));
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/airfl.h")).unwrap();
    for name in [
        "airfl_last_error_message",
        "airfl_config_default",
        "airfl_config_set",
        "airfl_run_experiment",
        "airfl_result_metric",
        "airfl_result_write_csv",
        "airfl_zf_combiner",
        "airfl_solve_allocation",
        "airfl_dp_epsilon",
        "airfl_rdp_to_dp",
        "AIRFL_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
