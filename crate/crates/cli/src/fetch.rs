use std::io::Read;
use std::path::Path;

use nero_core::harness::{HarnessError, IdxFile, MNIST_FILES};

pub const DEFAULT_BASE_URL: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";

/// Downloads `<stem>.gz` for every MNIST file into `out`, parsing each one
/// before it is kept.
pub fn fetch_mnist(out: &Path, base_url: &str) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out)?;
    for stem in MNIST_FILES {
        let name = format!("{stem}.gz");
        let url = format!("{}/{name}", base_url.trim_end_matches('/'));
        log::info!("fetching {url}");
        let resp = ureq::get(&url)
            .call()
            .map_err(|e| HarnessError::Data(format!("{url}: {e}")))?;
        let mut bytes = Vec::new();
        resp.into_reader()
            .read_to_end(&mut bytes)
            .map_err(|e| HarnessError::Data(format!("{url}: {e}")))?;
        let partial = out.join(format!("{name}.part"));
        std::fs::write(&partial, &bytes)?;
        if let Err(e) = IdxFile::read(&partial) {
            let _ = std::fs::remove_file(&partial);
            return Err(e);
        }
        std::fs::rename(&partial, out.join(&name))?;
    }
    Ok(())
}
