use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use nicenet_ffi::*;

fn ramp(shape: [usize; 3]) -> Vec<f32> {
    let n = shape.iter().product::<usize>();
    (0..n).map(|i| (i % shape[2]) as f32 / shape[2] as f32 + 0.01 * (i / shape[2] % shape[1]) as f32).collect()
}

fn last_error() -> String {
    let p = nice_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn volume_round_trip_through_handles() {
    let data = ramp([4, 5, 6]);
    let mut vol = ptr::null_mut();
    assert_eq!(unsafe { nice_volume_new(4, 5, 6, data.as_ptr(), &mut vol) }, NiceStatus::Ok);
    let mut shape = [0usize; 3];
    assert_eq!(unsafe { nice_volume_shape(vol, shape.as_mut_ptr()) }, NiceStatus::Ok);
    assert_eq!(shape, [4, 5, 6]);
    let mut back = vec![0.0f32; data.len()];
    assert_eq!(unsafe { nice_volume_copy_data(vol, back.as_mut_ptr(), back.len()) }, NiceStatus::Ok);
    assert_eq!(back, data);
    let mut short = vec![0.0f32; 3];
    assert_eq!(
        unsafe { nice_volume_copy_data(vol, short.as_mut_ptr(), short.len()) },
        NiceStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("v.nii").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nice_volume_save(vol, path.as_ptr()) }, NiceStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { nice_volume_load(path.as_ptr(), &mut loaded) }, NiceStatus::Ok);
    let mut again = vec![0.0f32; data.len()];
    unsafe { nice_volume_copy_data(loaded, again.as_mut_ptr(), again.len()) };
    assert_eq!(again, data);
    unsafe {
        nice_volume_free(vol);
        nice_volume_free(loaded);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut vol = ptr::null_mut();
    assert_eq!(unsafe { nice_volume_new(2, 2, 2, ptr::null(), &mut vol) }, NiceStatus::NullArgument);
    assert!(last_error().contains("data"));
    let missing = CString::new("/nonexistent/dir/x.nii").unwrap();
    assert_eq!(unsafe { nice_volume_load(missing.as_ptr(), &mut vol) }, NiceStatus::Io);
    assert!(last_error().contains("/nonexistent/dir/x.nii"));
    let bad = CString::new(r#"{"levels": 9}"#).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { nice_model_new(bad.as_ptr(), 0, &mut model) }, NiceStatus::Config);
    assert!(model.is_null());
    let nan = [f32::NAN; 8];
    assert_eq!(unsafe { nice_volume_new(2, 2, 2, nan.as_ptr(), &mut vol) }, NiceStatus::Data);
}

#[test]
fn register_and_warp() {
    let shape = [16, 16, 16];
    let data = ramp(shape);
    let cfg = CString::new(r#"{"levels": 2, "enc_channels": [2,2,2,2,2], "dec_channels": [2,2,2,2,2]}"#).unwrap();
    let (mut model, mut fixed, mut moving, mut reg) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(nice_model_new(cfg.as_ptr(), 3, &mut model), NiceStatus::Ok);
        let mut levels = 0;
        assert_eq!(nice_model_levels(model, &mut levels), NiceStatus::Ok);
        assert_eq!(levels, 2);
        nice_volume_new(16, 16, 16, data.as_ptr(), &mut fixed);
        nice_volume_new(16, 16, 16, data.as_ptr(), &mut moving);
        assert_eq!(nice_register(model, fixed, moving, &mut reg), NiceStatus::Ok);
        let mut steps = 0;
        nice_registration_steps(reg, &mut steps);
        assert_eq!(steps, 2);
        let mut coarse = ptr::null_mut();
        assert_eq!(nice_registration_field(reg, 0, &mut coarse), NiceStatus::Ok);
        let mut s = [0usize; 3];
        nice_field_shape(coarse, s.as_mut_ptr());
        assert_eq!(s, [8, 8, 8]);
        let mut field = ptr::null_mut();
        assert_eq!(nice_registration_field(reg, 2, &mut field), NiceStatus::InvalidArgument);
        assert_eq!(nice_registration_field(reg, 1, &mut field), NiceStatus::Ok);
        let mut u = vec![0.0f32; 3 * 4096];
        assert_eq!(nice_field_copy_data(field, u.as_mut_ptr(), u.len()), NiceStatus::Ok);
        // small-initialised heads: near-identity output
        assert!(u.iter().all(|v| v.abs() < 1e-2));
        let mut njd = -1.0;
        assert_eq!(nice_field_njd_percent(field, &mut njd), NiceStatus::Ok);
        assert!((0.0..=100.0).contains(&njd));
        let mut warped = ptr::null_mut();
        assert_eq!(nice_warp(moving, field, &mut warped), NiceStatus::Ok);
        let mut w = vec![0.0f32; 4096];
        nice_volume_copy_data(warped, w.as_mut_ptr(), w.len());
        assert!(w.iter().zip(&data).all(|(a, b)| (a - b).abs() < 1e-2));
        nice_volume_free(warped);
        nice_field_free(field);
        nice_field_free(coarse);
        nice_registration_free(reg);
        nice_volume_free(fixed);
        nice_volume_free(moving);
        nice_model_free(model);
        // null is accepted by every free function
        nice_model_free(ptr::null_mut());
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nicenet.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build.rs");
    for name in ["nice_register", "nice_volume_new", "nice_last_error_message", "NICE_STATUS_NULL_ARGUMENT", "typedef struct NiceModel NiceModel"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| std::process::Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"nicenet.h\"\nint main(void) { NiceModel *m = 0; size_t l = 0; return nice_model_levels(m, &l) == NICE_STATUS_NULL_ARGUMENT ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success(), "generated header does not compile");
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(nice_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
