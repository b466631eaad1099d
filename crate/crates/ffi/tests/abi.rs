use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use starnet_ffi::*;

fn params(lambda: &[f64], mu: &[f64]) -> *mut StarnetParams {
    let mut p = ptr::null_mut();
    let status =
        unsafe { starnet_params_new(lambda.len() - 1, lambda.as_ptr(), mu.as_ptr(), &mut p) };
    assert_eq!(status, StarnetStatus::Ok);
    p
}

#[test]
fn regime_json_round_trip() {
    let p = params(&[0.3, 0.2, 0.4], &[1.0, 1.0, 1.0]);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { starnet_regime_json(p, &mut s) }, StarnetStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe {
        starnet_string_free(s);
        starnet_params_free(p);
    }
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["kappa"], 2);
    assert_eq!(v["case_label"], "Case3");
    assert_eq!(v["validity_horizon"], "inf");
}

#[test]
fn invalid_rates_set_error() {
    let mut p = ptr::null_mut();
    let lambda = [0.3, -1.0, 0.4];
    let mu = [1.0; 3];
    let status = unsafe { starnet_params_new(2, lambda.as_ptr(), mu.as_ptr(), &mut p) };
    assert_eq!(status, StarnetStatus::Model);
    assert!(p.is_null());
    assert!(last_error_message().unwrap().contains("lambda"));
    let status = unsafe { starnet_params_new(2, ptr::null(), mu.as_ptr(), &mut p) };
    assert_eq!(status, StarnetStatus::NullPointer);
}

#[test]
fn simulate_and_read_samples() {
    let p = params(&[0.3, 0.2, 0.4], &[1.0, 1.0, 1.0]);
    let init = [100u64, 0, 0];
    let times = [1.0, 5.0, 10.0];
    let run = || {
        let mut t = ptr::null_mut();
        let status = unsafe {
            starnet_simulate(
                p,
                init.as_ptr(),
                3,
                7,
                0,
                10.0,
                times.as_ptr(),
                3,
                0,
                &mut t,
            )
        };
        assert_eq!(status, StarnetStatus::Ok);
        t
    };
    let (a, b) = (run(), run());
    assert_eq!(unsafe { starnet_trajectory_len(a) }, 3);
    assert_eq!(unsafe { starnet_trajectory_truncated(a) }, 0);
    assert!(unsafe { starnet_trajectory_events(a) } > 0);
    for (k, &want) in times.iter().enumerate() {
        let (mut ta, mut tb) = (0.0, 0.0);
        let (mut ca, mut cb) = ([0u64; 3], [0u64; 3]);
        unsafe {
            assert_eq!(
                starnet_trajectory_sample(a, k, &mut ta, ca.as_mut_ptr(), 3),
                StarnetStatus::Ok
            );
            assert_eq!(
                starnet_trajectory_sample(b, k, &mut tb, cb.as_mut_ptr(), 3),
                StarnetStatus::Ok
            );
        }
        assert_eq!(ta, want);
        assert_eq!((ta, ca), (tb, cb));
    }
    let mut t = 0.0;
    let mut c = [0u64; 3];
    let status = unsafe { starnet_trajectory_sample(a, 3, &mut t, c.as_mut_ptr(), 3) };
    assert_eq!(status, StarnetStatus::InvalidArgument);
    let status = unsafe { starnet_trajectory_sample(a, 0, &mut t, c.as_mut_ptr(), 2) };
    assert_eq!(status, StarnetStatus::InvalidArgument);
    let mut bad = ptr::null_mut();
    let late = [20.0];
    let status = unsafe {
        starnet_simulate(
            p,
            init.as_ptr(),
            3,
            7,
            0,
            10.0,
            late.as_ptr(),
            1,
            0,
            &mut bad,
        )
    };
    assert_eq!(status, StarnetStatus::Simulation);
    unsafe {
        starnet_trajectory_free(a);
        starnet_trajectory_free(b);
        starnet_params_free(p);
    }
}

#[test]
fn bounds_and_version() {
    let mut v = 0.0;
    assert_eq!(
        unsafe { starnet_kingman_bound(1.0, 2.0, 3, &mut v) },
        StarnetStatus::Ok
    );
    assert_eq!(v, 0.125);
    assert_eq!(
        unsafe { starnet_reflected_sup_bound(1.0, 2.0, 1.0, 3, &mut v) },
        StarnetStatus::Ok
    );
    assert_eq!(v, 0.25);
    assert_eq!(
        unsafe { starnet_kingman_bound(2.0, 1.0, 3, &mut v) },
        StarnetStatus::Oracle
    );
    let version = unsafe { CStr::from_ptr(starnet_version()) }
        .to_str()
        .unwrap();
    assert!(version.contains("chacha8"));
}

#[test]
fn stability_flag() {
    let mut flag = -1;
    let p = params(&[0.2, 0.1, 0.25], &[1.0; 3]);
    assert_eq!(
        unsafe { starnet_stability(p, &mut flag) },
        StarnetStatus::Ok
    );
    assert_eq!(flag, 1);
    unsafe { starnet_params_free(p) };
    let p = params(&[0.7, 0.2, 0.5], &[1.0; 3]);
    assert_eq!(
        unsafe { starnet_stability(p, &mut flag) },
        StarnetStatus::Ok
    );
    assert_eq!(flag, 0);
    unsafe { starnet_params_free(p) };
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/starnet.h");
    let dir = tempfile_dir();
    let src = dir.join("probe.c");
    std::fs::write(
        &src,
        "#include \"starnet.h\"\nint main(void) { return starnet_version() == 0; }\n",
    )
    .unwrap();
    let include = CString::new(concat!(env!("CARGO_MANIFEST_DIR"), "/include")).unwrap();
    let out = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg(format!("-I{}", include.to_str().unwrap()))
        .arg(&src)
        .output()
        .expect("C compiler available");
    assert!(
        out.status.success(),
        "{header}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("starnet-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
