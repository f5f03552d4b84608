//! Generate a synthetic paired T1/FA dataset and inspect it.
//!
//! Every subject is an ellipsoidal head phantom whose ventricle grows with
//! diagnostic severity; the FA map traces the same geometry, so the dataset
//! carries both a classification signal and a learnable T1 -> FA mapping.
//!
//! Run with: `cargo run --release --example generate_phantom`

use neuroimpute::manifest::{Diagnosis, Split};
use neuroimpute::phantom::{generate_dataset, DatasetCounts, PhantomSpec, SplitCounts};

fn main() -> neuroimpute::Result<()> {
    let out = std::env::temp_dir().join("neuroimpute_phantom_demo");
    let spec = PhantomSpec::desk(16, 42);
    let counts = DatasetCounts {
        train: SplitCounts { cn: 6, mci: 6, ad: 6 },
        val: SplitCounts { cn: 2, mci: 2, ad: 2 },
        test: SplitCounts { cn: 2, mci: 2, ad: 2 },
    };

    // Half the subjects keep their FA volume; the rest are T1-only and form
    // the pool that imputation experiments draw from.
    let manifest = generate_dataset(&spec, &counts, 0.5, &out)?;

    println!("wrote {} scans under {}", manifest.records.len(), out.display());
    for split in Split::ALL {
        let total = manifest.split(split).count();
        let paired = manifest.split(split).filter(|r| r.has_dwi).count();
        println!("  {split:5}  {total:2} scans, {paired} paired");
    }

    // The class signal: larger ventricles mean more dark (CSF) voxels near
    // the brain center, where the background cannot reach.
    println!("\nmean central dark-voxel count (ventricle proxy) by class:");
    for diagnosis in Diagnosis::ALL {
        let mut total = 0usize;
        let mut n = 0usize;
        for record in manifest.records.iter().filter(|r| r.diagnosis == diagnosis) {
            let path = out.join(record.t1_path.as_ref().unwrap());
            let volume = neuroimpute::volume::read_volume(path)?;
            let (nx, ny, nz) = volume.dims();
            for x in nx / 4..nx - nx / 4 {
                for y in ny / 4..ny - ny / 4 {
                    for z in nz / 4..nz - nz / 4 {
                        if volume.get(x, y, z) < 0.35 {
                            total += 1;
                        }
                    }
                }
            }
            n += 1;
        }
        println!("  {diagnosis:3}  {:.1}", total as f64 / n as f64);
    }
    Ok(())
}
