//! Regenerate the synthetic datasets in `crates/relsurv/data`.

use std::path::Path;

use relsurv::bundled;
use relsurv::io;

fn main() -> relsurv::AppResult<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    io::create_dir(&dir)?;
    io::write_cohort(&dir.join("smoke.csv"), &bundled::smoke()?, &bundled::smoke_labels())?;
    io::write_cohort(&dir.join("colon_like.csv"), &bundled::colon_like(1000, 2024)?, &bundled::colon_labels())?;
    io::write_life_table(
        &dir.join("colon_lifetable.csv"),
        &bundled::colon_life_table(),
        &["dep"],
        &[bundled::colon_labels()[2].clone()],
    )?;
    println!("wrote datasets to {}", dir.display());
    Ok(())
}
