use stainkit::stain::destain;
use stainkit::RgbImage;
use stainkit_wasm::ops::{compare_rgba, focal_curve, separate_rgba};

fn tile() -> (Vec<u8>, RgbImage) {
    let img = RgbImage::from_fn(16, 12, |r, c| [0.3 + 0.02 * r as f64, 0.5, 0.9 - 0.03 * c as f64]);
    let rgba = img
        .to_rgb8()
        .chunks_exact(3)
        .enumerate()
        .flat_map(|(i, px)| [px[0], px[1], px[2], (i % 256) as u8])
        .collect();
    (rgba, img)
}

#[test]
fn separate_matches_library_and_keeps_alpha() {
    let (rgba, _) = tile();
    let out = separate_rgba(&rgba, 12, 16, "h").unwrap();
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let want = destain(&RgbImage::from_rgb8(16, 12, &rgb).unwrap()).to_rgb8();
    let got: Vec<u8> = out.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    assert_eq!(got, want);
    let alpha: Vec<u8> = out.chunks_exact(4).map(|p| p[3]).collect();
    assert_eq!(alpha, (0..192).map(|i| i as u8).collect::<Vec<_>>());
}

#[test]
fn separate_rejects_bad_input() {
    let (rgba, _) = tile();
    assert!(separate_rgba(&rgba, 12, 15, "H").unwrap_err().contains("RGBA bytes"));
    assert!(separate_rgba(&rgba, 12, 16, "Q").is_err());
}

#[test]
fn compare_identical_and_small() {
    let (rgba, _) = tile();
    assert_eq!(compare_rgba(&rgba, &rgba, 12, 16).unwrap(), "{\n  \"mae\": 0.0,\n  \"psnr_db\": \"inf\",\n  \"ssim\": 1.0\n}\n");
    let small = vec![200u8; 4 * 4 * 4];
    let v: serde_json::Value = serde_json::from_str(&compare_rgba(&small, &small, 4, 4).unwrap()).unwrap();
    assert_eq!(v["ssim"], 1.0);
    assert!(compare_rgba(&small, &small, 2, 2).is_err());
}

#[test]
fn focal_curve_shape() {
    let ce = focal_curve(1.0, 0.0, 50).unwrap();
    for (i, v) in ce.iter().enumerate() {
        let p = 0.01 + 0.98 * i as f64 / 49.0;
        assert!((v + p.ln()).abs() < 1e-12);
    }
    let focal = focal_curve(1.0, 2.0, 50).unwrap();
    assert!(focal.windows(2).all(|w| w[1] < w[0]));
    assert!(focal.iter().zip(&ce).all(|(f, c)| f <= c));
    assert!(focal_curve(1.0, 2.0, 1).is_err());
}
