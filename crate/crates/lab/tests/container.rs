use std::fs;

use aesim::container::{read_dataset, read_latent_csv, read_manifest, write_dataset, write_latent, MANIFEST};
use aesim_core::dataset::{extract_patches, generate_synthetic_dataset, SyntheticConfig};
use aesim_core::embedding::{pca_embed, EmbeddingSource};

fn small() -> (SyntheticConfig, aesim_core::dataset::Dataset) {
    let cfg = SyntheticConfig { height: 20, width: 18, n_bias: 21, rng_seed: 5, ..Default::default() };
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    (cfg, ds)
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = small();
    write_dataset(dir.path(), &ds, Some(&cfg)).unwrap();
    let b = read_dataset(dir.path()).unwrap();
    assert_eq!(b.dataset, ds);
    assert_eq!(b.manifest.synthetic, Some(cfg));
    assert!(b.latent.is_none());
    assert_eq!(fs::metadata(dir.path().join("loops.bin")).unwrap().len(), (20 * 18 * 21 * 4) as u64);
}

#[test]
fn latent_round_trip_at_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = small();
    write_dataset(dir.path(), &ds, None).unwrap();
    let e = pca_embed(&extract_patches(ds.image(), 8).unwrap()).unwrap();
    write_latent(dir.path(), 8, &e).unwrap();
    let (k, back) = read_dataset(dir.path()).unwrap().latent.unwrap();
    assert_eq!(k, 8);
    assert_eq!(back.source(), EmbeddingSource::External);
    assert_eq!(back.len(), e.len());
    for (a, b) in e.coords().iter().zip(back.coords()) {
        assert_eq!(a[0] as f32 as f64, b[0]);
        assert_eq!(a[1] as f32 as f64, b[1]);
    }
    assert_eq!(read_manifest(dir.path()).unwrap().latent.unwrap().source, EmbeddingSource::Pca);
}

#[test]
fn truncated_or_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = small();
    write_dataset(dir.path(), &ds, None).unwrap();
    let loops = dir.path().join("loops.bin");
    let bytes = fs::read(&loops).unwrap();
    fs::write(&loops, &bytes[..bytes.len() - 4]).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("loops.bin"), "{err}");

    fs::write(&loops, &bytes).unwrap();
    let m = dir.path().join(MANIFEST);
    let text = fs::read_to_string(&m).unwrap().replace("\"version\": 1", "\"version\": 7");
    fs::write(&m, text).unwrap();
    assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("version 7"));
    assert!(read_dataset(&dir.path().join("missing")).is_err());
}

#[test]
fn non_finite_loop_sample_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = small();
    write_dataset(dir.path(), &ds, None).unwrap();
    let loops = dir.path().join("loops.bin");
    let mut bytes = fs::read(&loops).unwrap();
    // pixel 2, sample 1
    let at = (2 * 21 + 1) * 4;
    bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&loops, bytes).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("pixel 2") && err.contains("sample 1"), "{err}");
}

#[test]
fn latent_csv_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.csv");
    fs::write(&p, "z1,z2\n0.5,1\n-2,3.25\n").unwrap();
    let e = read_latent_csv(&p, 2).unwrap();
    assert_eq!(e.coords(), &[[0.5, 1.0], [-2.0, 3.25]]);
    assert!(read_latent_csv(&p, 3).is_err());
    fs::write(&p, "0.5,1\n1,nan\n").unwrap();
    assert!(read_latent_csv(&p, 2).unwrap_err().to_string().contains("latent row 1"));
    fs::write(&p, "0.5,1\nx,2\n").unwrap();
    assert!(read_latent_csv(&p, 2).unwrap_err().to_string().contains("line 2"));
    fs::write(&p, "0.5,1,3\n").unwrap();
    assert!(read_latent_csv(&p, 1).is_err());
}
