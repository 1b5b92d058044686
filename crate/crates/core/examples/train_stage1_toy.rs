//! Trains the tri-plane autoencoder on a slice of the toy corpus and meshes
//! one held-out reconstruction.
//!
//! ```bash
//! cargo run --release -p argus3d --example train_stage1_toy -- [epochs] [shapes-per-class]
//! ```

use argus3d::autoencoder::{train_stage1, AutoencoderConfig, Stage1TrainConfig, TriPlaneAutoencoder};
use argus3d::geometry::toy::ToyClass;
use argus3d::geometry::{rasterize_occupancy, save_mesh, volumetric_iou};
use argus3d::Result;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let epochs = args.next().unwrap_or(10);
    let per_class = args.next().unwrap_or(16);

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in ToyClass::ALL {
        for i in 0..per_class {
            let shape = class.shape(i as u64);
            if i % 5 == 4 {
                val.push(shape);
            } else {
                train.push(shape);
            }
        }
    }
    let mut model = TriPlaneAutoencoder::new(AutoencoderConfig::default(), 0)?;
    println!("{} parameters, {} tokens per shape", model.params.num_scalars(), model.config().tokens());
    let tc = Stage1TrainConfig { epochs, val_every: 5, ..Default::default() };
    let report = train_stage1(&mut model, &train, &val, &tc, None)?;
    println!("final validation IoU {:?}", report.final_val_iou);

    let (grid, mesh) = model.reconstruct(&val[0], 32, 1)?;
    let iou = volumetric_iou(&grid, &rasterize_occupancy(&val[0], 32), 0.5)?;
    let path = std::env::temp_dir().join("argus3d_reconstruction.obj");
    save_mesh(&mesh, &path)?;
    println!("held-out {:?}: IoU {iou:.4}, indices {:?}", val[0].kind(), model.encode_shape(&val[0], 1)?);
    println!("wrote {}", path.display());
    Ok(())
}
