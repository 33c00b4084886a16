//! Exported model bundles: weight files, `FIM1` vector archives and a
//! `key=value` manifest carrying SHA-256 digests.
//!
//! ```text
//! manifest.txt
//!   format=fcsrg-bundle/1
//!   n=<signal dim>  latent_dim=<L>
//!   layout.groups=<comma list>  layout.continuous=<k>  layout.v_dim=<k>
//!   generator=<file>            generator.sha256=<hex>
//!   fixture.latents=<file>      fixture.latents.sha256=<hex>
//!   fixture.outputs=<file>      fixture.outputs.sha256=<hex>
//!   projector=<file>            (optional, with digest)
//!   test_images=<file>          (optional, with digest)
//!   any other keys are free-form metadata
//! ```
//!
//! `FIM1` archives: magic, `u32` count, `u32` dim, then `count × dim`
//! little-endian `f32` values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generative::{Generator, LatentLayout};
use crate::projector::Projector;
use crate::tensor::DenseVector;
use crate::weights;

pub const FIM_MAGIC: &[u8; 4] = b"FIM1";
pub const MANIFEST: &str = "manifest.txt";
pub const FORMAT: &str = "fcsrg-bundle/1";

/// Manifest keys that name files and must carry a `.sha256` digest.
const FILE_KEYS: [&str; 5] = ["generator", "projector", "test_images", "fixture.latents", "fixture.outputs"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn encode_fim(vectors: &[DenseVector]) -> Result<Vec<u8>> {
    let dim = vectors.first().map_or(0, |v| v.len());
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::dim("FIM1 vector", dim, v.len()));
    }
    let as_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit in u32")));
    let mut out = Vec::with_capacity(12 + 4 * dim * vectors.len());
    out.extend_from_slice(FIM_MAGIC);
    out.extend_from_slice(&as_u32(vectors.len())?.to_le_bytes());
    out.extend_from_slice(&as_u32(dim)?.to_le_bytes());
    for v in vectors {
        for &x in v.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_fim(bytes: &[u8]) -> Result<Vec<DenseVector>> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != FIM_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad FIM1 magic".into(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (count, dim) = (word(4), word(8));
    let need = count
        .checked_mul(dim)
        .and_then(|k| k.checked_mul(4))
        .and_then(|k| k.checked_add(12))
        .ok_or_else(|| Error::Format {
            offset: 4,
            message: format!("archive size {count}x{dim} overflows"),
        })?;
    if bytes.len() < need {
        return Err(Error::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(Error::Format {
            offset: need,
            message: format!("{} trailing bytes", bytes.len() - need),
        });
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(if dim == 0 {
        vec![DenseVector::zeros(0); count]
    } else {
        values.chunks(dim).map(|c| DenseVector::new(c.to_vec())).collect()
    })
}

pub fn write_fim(path: impl AsRef<Path>, vectors: &[DenseVector]) -> Result<()> {
    std::fs::write(path, encode_fim(vectors)?)?;
    Ok(())
}

pub fn read_fim(path: impl AsRef<Path>) -> Result<Vec<DenseVector>> {
    decode_fim(&std::fs::read(path)?)
}

/// Ordered `key=value` pairs. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("manifest line {}: expected key=value", i + 1)));
            };
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("manifest line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("manifest is missing `{key}`")))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("manifest `{key}` is not a count: {v}")))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub generator: Generator,
    pub projector: Option<Projector>,
    pub test_images: Vec<DenseVector>,
    pub fixture_latents: Vec<DenseVector>,
    pub fixture_outputs: Vec<DenseVector>,
}

fn parse_groups(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Config(format!("bad group size `{t}` in layout.groups"))))
        .collect()
}

/// Read a file named by the manifest after checking its digest.
fn verified(dir: &Path, manifest: &Manifest, key: &str) -> Result<Option<Vec<u8>>> {
    let Some(name) = manifest.get(key) else {
        return Ok(None);
    };
    let expected = manifest.require(&format!("{key}.sha256"))?;
    let bytes = std::fs::read(dir.join(name))?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::Digest {
            file: name.to_string(),
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(Some(bytes))
}

fn same_layout(a: &LatentLayout, b: &LatentLayout) -> bool {
    a.categorical_groups() == b.categorical_groups()
        && a.continuous_codes() == b.continuous_codes()
        && a.v_dim() == b.v_dim()
}

/// Load and validate a bundle directory: digests, manifest/weight-file
/// agreement and fixture shapes. Parity is checked separately.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let manifest = Manifest::parse(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    let format = manifest.require("format")?;
    if format != FORMAT {
        return Err(Error::Config(format!("unsupported bundle format `{format}`")));
    }
    let digests: Vec<_> = FILE_KEYS
        .iter()
        .map(|k| verified(dir, &manifest, k))
        .collect::<Result<_>>()?;
    let [gen_bytes, proj_bytes, images, latents, outputs] = <[Option<Vec<u8>>; 5]>::try_from(digests).expect("five keys");

    let n = manifest.require_usize("n")?;
    let l = manifest.require_usize("latent_dim")?;
    let layout = LatentLayout::new(
        parse_groups(manifest.require("layout.groups")?)?,
        manifest.require_usize("layout.continuous")?,
        manifest.require_usize("layout.v_dim")?,
    )?;
    let gen_bytes = gen_bytes.ok_or_else(|| Error::Config("manifest is missing `generator`".into()))?;
    let (net, file_layout) = weights::decode(&gen_bytes)?;
    let file_layout = file_layout.ok_or_else(|| Error::Config("generator weight file has no latent layout".into()))?;
    if !same_layout(&file_layout, &layout) || layout.l() != l {
        return Err(Error::Config("manifest layout disagrees with the generator weight file".into()));
    }
    if net.output_dim() != n {
        return Err(Error::dim("bundle generator output", n, net.output_dim()));
    }
    let mut generator = Generator::new(net, file_layout)?;
    generator.t_hat = Some(generator.net().lipschitz_upper_bound());

    let projector = match proj_bytes {
        Some(b) => {
            let (net, pl) = weights::decode(&b)?;
            let pl = pl.ok_or_else(|| Error::Config("projector weight file has no latent layout".into()))?;
            if !same_layout(&pl, &layout) || net.input_dim() != n {
                return Err(Error::Config("projector does not match the bundle layout".into()));
            }
            Some(Projector::new(net, pl)?)
        }
        None => None,
    };
    let test_images = images.map(|b| decode_fim(&b)).transpose()?.unwrap_or_default();
    if let Some(v) = test_images.iter().find(|v| v.len() != n) {
        return Err(Error::dim("bundle test image", n, v.len()));
    }
    let fixture_latents = decode_fim(&latents.ok_or_else(|| Error::Config("manifest is missing `fixture.latents`".into()))?)?;
    let fixture_outputs = decode_fim(&outputs.ok_or_else(|| Error::Config("manifest is missing `fixture.outputs`".into()))?)?;
    if fixture_latents.len() != fixture_outputs.len() {
        return Err(Error::dim("fixture pairs", fixture_latents.len(), fixture_outputs.len()));
    }
    if let Some(z) = fixture_latents.iter().find(|z| z.len() != l) {
        return Err(Error::dim("fixture latent", l, z.len()));
    }
    if let Some(x) = fixture_outputs.iter().find(|x| x.len() != n) {
        return Err(Error::dim("fixture output", n, x.len()));
    }
    Ok(Bundle {
        manifest,
        generator,
        projector,
        test_images,
        fixture_latents,
        fixture_outputs,
    })
}

impl Bundle {
    /// Largest `‖G(z) − x‖ / ‖x‖` over the fixture (absolute error when
    /// `x = 0`).
    pub fn fixture_parity(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (z, x) in self.fixture_latents.iter().zip(&self.fixture_outputs) {
            let err = self.generator.generate_flat(z)?.distance(x);
            let scale = x.norm();
            worst = worst.max(if scale > 0.0 { err / scale } else { err });
        }
        Ok(worst)
    }

    pub fn check_parity(&self, tolerance: f64) -> Result<f64> {
        let p = self.fixture_parity()?;
        if p <= tolerance {
            Ok(p)
        } else {
            Err(Error::Config(format!("fixture parity {p:e} exceeds tolerance {tolerance:e}")))
        }
    }
}

pub struct BundleExport<'a> {
    pub generator: &'a Generator,
    pub projector: Option<&'a Projector>,
    pub test_images: &'a [DenseVector],
    pub fixture_latents: &'a [DenseVector],
    /// Extra manifest entries.
    pub metadata: &'a [(&'a str, &'a str)],
}

/// Write a bundle the loader accepts. Fixture outputs are computed from the
/// weights as stored (after `f32` rounding).
pub fn write_bundle(dir: impl AsRef<Path>, export: &BundleExport<'_>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let gen = export.generator;
    let layout = gen.layout();
    let mut manifest = Manifest::default();
    for (k, v) in export.metadata {
        manifest.set(*k, *v);
    }
    manifest.set("format", FORMAT);
    manifest.set("n", gen.n().to_string());
    manifest.set("latent_dim", layout.l().to_string());
    let groups: Vec<String> = layout.categorical_groups().iter().map(usize::to_string).collect();
    manifest.set("layout.groups", groups.join(","));
    manifest.set("layout.continuous", layout.continuous_codes().to_string());
    manifest.set("layout.v_dim", layout.v_dim().to_string());

    let mut put = |key: &str, file: &str, bytes: Vec<u8>| -> Result<()> {
        std::fs::write(dir.join(file), &bytes)?;
        manifest.set(key, file);
        manifest.set(format!("{key}.sha256"), sha256_hex(&bytes));
        Ok(())
    };
    let gen_bytes = weights::encode(gen.net(), Some(layout));
    let (stored, _) = weights::decode(&gen_bytes)?;
    let outputs = export
        .fixture_latents
        .iter()
        .map(|z| stored.forward(z))
        .collect::<Result<Vec<_>>>()?;
    put("generator", "generator.fcw", gen_bytes)?;
    if let Some(p) = export.projector {
        put("projector", "projector.fcw", weights::encode(p.net(), Some(p.layout())))?;
    }
    if !export.test_images.is_empty() {
        put("test_images", "test_images.fim", encode_fim(export.test_images)?)?;
    }
    put("fixture.latents", "fixture_latents.fim", encode_fim(export.fixture_latents)?)?;
    put("fixture.outputs", "fixture_outputs.fim", encode_fim(&outputs)?)?;
    std::fs::write(dir.join(MANIFEST), manifest.render())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fim_round_trip_and_errors() {
        let v = vec![DenseVector::new(vec![1.0, -0.5, 2.25]), DenseVector::new(vec![0.0, 3.0, 1e-3])];
        let b = encode_fim(&v).unwrap();
        assert_eq!(&b[..4], b"FIM1");
        assert_eq!(b.len(), 12 + 6 * 4);
        let back = decode_fim(&b).unwrap();
        assert_eq!(back[0], v[0]);
        assert!((back[1][2] - 1e-3).abs() < 1e-9);

        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_fim(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_fim(&b[..b.len() - 1]), Err(Error::Truncated { .. })));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_fim(&long), Err(Error::Format { .. })));
        assert!(encode_fim(&[DenseVector::zeros(2), DenseVector::zeros(3)]).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = Manifest::parse("# comment\n\na = 1\nb=x=y\n").unwrap();
        assert_eq!(m.get("a"), Some("1"));
        assert_eq!(m.get("b"), Some("x=y"));
        assert!(Manifest::parse("a=1\na=2").is_err());
        assert!(Manifest::parse("novalue").is_err());
        assert!(m.require("missing").is_err());
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
    }
}
