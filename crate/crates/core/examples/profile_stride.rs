//! Profile the thread block stride of the shipped kernels and of a
//! synthetic clustered kernel at several page sizes.
//!
//!     cargo run --example profile_stride

use tbsim::batching::{plan_kernel, sharing_histogram, ProfileOptions};
use tbsim::workload::{Dim2, KernelSpec, MappingKind, MatrixMapping, WorkloadFile};

fn show(spec: &KernelSpec, page: u64) -> tbsim::Result<()> {
    let plan = plan_kernel(spec, page, &ProfileOptions::default())?;
    let h = sharing_histogram(&plan);
    println!(
        "{:<20} page {:>6}  stride {:>2} {:<12} batches {:>3}  exclusive pages {:>5.1}%  histogram {:?}",
        spec.name,
        page,
        plan.stride,
        format!("{:?}", plan.formation),
        plan.batches.len(),
        100.0 * h.exclusive_fraction(),
        h.bins
    );
    Ok(())
}

fn main() -> tbsim::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    for f in ["fig4_workload.json", "fig6_workload.json", "fig9_workload.json"] {
        let wl = WorkloadFile::load(format!("{dir}/{f}"))?;
        show(&wl.kernel, 4096)?;
    }

    // 64 threads x 4 accesses x 4 bytes = 1 KiB per block: a page of
    // 2^n KiB groups 2^n blocks.
    let spec = KernelSpec {
        name: "clustered-1KiB".into(),
        grid_dim: Dim2::new(64, 1),
        block_dim: Dim2::new(64, 1),
        warp_size: 32,
        compute_gap: 0,
        matrices: vec![MatrixMapping {
            base_addr: 0,
            element_size: 4,
            row_len: 4096,
            mapping_kind: MappingKind::Clustered,
            accesses_per_thread: 4,
            read_fraction: 1.0,
        }],
    };
    for page in [1024, 2048, 4096, 8192] {
        show(&spec, page)?;
    }
    Ok(())
}
