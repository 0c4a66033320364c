//! The geo-tagged fingerprint database over a rectangular grid.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adp::Adp;
use crate::channel::{ArrayConfig, OfdmConfig};
use crate::container::{AdpContainer, AdpRecord, VERSION_PLAIN};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: Vec2,
    /// Meters between adjacent points.
    pub spacing: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl Default for GridSpec {
    /// 40 x 40 points at 0.25 m in front of the preset base stations.
    fn default() -> Self {
        Self {
            origin: Vec2::new(2.0, -4.875),
            spacing: 0.25,
            n_rows: 40,
            n_cols: 40,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Config(
                "grid needs positive spacing and at least one row and column".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.n_cols, index % self.n_cols)
    }

    /// Rows advance along +y, columns along +x.
    pub fn point(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + col as f64 * self.spacing,
            self.origin.y + row as f64 * self.spacing,
        )
    }

    pub fn point_at(&self, index: usize) -> Vec2 {
        let (r, c) = self.row_col(index);
        self.point(r, c)
    }

    /// Lower-left and upper-right corners.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        (self.origin, self.point(self.n_rows - 1, self.n_cols - 1))
    }

    /// Index of the grid point closest to `p` (clamped to the grid).
    pub fn nearest_index(&self, p: Vec2) -> usize {
        let snap = |v: f64, n: usize| ((v / self.spacing).round().max(0.0) as usize).min(n - 1);
        self.index(
            snap(p.y - self.origin.y, self.n_rows),
            snap(p.x - self.origin.x, self.n_cols),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintEntry {
    pub position: Vec2,
    pub adp: Adp,
    /// No resolvable path reached this point; excluded from similarity-weighted
    /// neighbor sets.
    pub lost_link: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbMeta {
    pub format_version: u16,
    pub seed: u64,
    pub truncated_paths: usize,
    pub grid: GridSpec,
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub environment: Environment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub grid: GridSpec,
    pub entries: Vec<FingerprintEntry>,
    pub meta: DbMeta,
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub index: usize,
    pub position: Vec2,
    pub distance: f64,
    pub entry: &'a FingerprintEntry,
}

/// Traces, synthesizes and transforms every grid point.
pub fn build_db(
    env: &Environment,
    grid: &GridSpec,
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<FingerprintDb> {
    let scene = Scene::new(env.clone(), *array, *ofdm)?;
    build_db_in(&scene, grid)
}

pub fn build_db_in(scene: &Scene, grid: &GridSpec) -> Result<FingerprintDb> {
    grid.validate()?;
    let measured: Vec<(FingerprintEntry, usize)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let position = grid.point_at(i);
            let trace = scene.trace(position)?;
            let adp = scene.adp_of(&trace.paths)?;
            Ok((
                FingerprintEntry {
                    position,
                    adp,
                    lost_link: trace.paths.is_empty(),
                },
                trace.truncated,
            ))
        })
        .collect::<Result<_>>()?;
    let truncated_paths = measured.iter().map(|(_, t)| t).sum();
    if truncated_paths > 0 {
        log::warn!("{truncated_paths} path(s) fell outside the delay window and were dropped");
    }
    Ok(FingerprintDb {
        grid: *grid,
        entries: measured.into_iter().map(|(e, _)| e).collect(),
        meta: DbMeta {
            format_version: VERSION_PLAIN,
            seed: 0,
            truncated_paths,
            grid: *grid,
            array: scene.array,
            ofdm: scene.ofdm,
            environment: scene.env.clone(),
        },
    })
}

impl FingerprintDb {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn adp_dims(&self) -> (usize, usize) {
        (self.meta.array.n_antennas, self.meta.ofdm.n_subcarriers)
    }

    /// Entries within `radius` of `center`, nearest first, ties in row-major
    /// grid order. Only the bounding box of the disc is scanned.
    pub fn neighbors_within(&self, center: Vec2, radius: f64) -> Vec<Neighbor<'_>> {
        let g = &self.grid;
        let span = |lo: f64, hi: f64, origin: f64, n: usize| -> Option<(usize, usize)> {
            let a = ((lo - origin) / g.spacing).ceil();
            let b = ((hi - origin) / g.spacing).floor();
            if b < 0.0 || a > (n - 1) as f64 || a > b {
                return None;
            }
            Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
        };
        // Widen by a hair so points exactly on the rim survive the floor/ceil.
        let slack = 1e-9 * g.spacing;
        let (Some((r0, r1)), Some((c0, c1))) = (
            span(center.y - radius - slack, center.y + radius + slack, g.origin.y, g.n_rows),
            span(center.x - radius - slack, center.x + radius + slack, g.origin.x, g.n_cols),
        ) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                let index = g.index(row, col);
                let entry = &self.entries[index];
                let distance = entry.position.distance(center);
                if distance <= radius {
                    out.push(Neighbor {
                        index,
                        position: entry.position,
                        distance,
                        entry,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        out
    }

    pub fn to_container(&self) -> AdpContainer {
        let (n_t, n_c) = self.adp_dims();
        AdpContainer {
            n_antennas: n_t,
            n_subcarriers: n_c,
            records: self
                .entries
                .iter()
                .map(|e| AdpRecord {
                    position: e.position,
                    adp: e.adp.clone(),
                    walk: None,
                })
                .collect(),
        }
    }
}

/// Sidecar holding the build metadata next to an `ADPF` file.
pub fn sidecar_path(path: &FsPath) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

pub fn save_db(db: &FingerprintDb, path: impl AsRef<FsPath>) -> Result<()> {
    let path = path.as_ref();
    let bytes = db.to_container().to_bytes()?;
    fs::write(path, bytes)?;
    let meta = toml::to_string(&db.meta)
        .map_err(|e| Error::Format(format!("cannot encode metadata: {e}")))?;
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

pub fn load_db(path: impl AsRef<FsPath>) -> Result<FingerprintDb> {
    let path = path.as_ref();
    let container = AdpContainer::read_from(std::io::BufReader::new(fs::File::open(path)?))?;
    let meta_text = fs::read_to_string(sidecar_path(path))?;
    let meta: DbMeta = toml::from_str(&meta_text)
        .map_err(|e| Error::Format(format!("metadata sidecar: {e}")))?;
    if meta.format_version != VERSION_PLAIN {
        return Err(Error::Version {
            found: meta.format_version,
            expected: VERSION_PLAIN,
        });
    }
    let dims = (meta.array.n_antennas, meta.ofdm.n_subcarriers);
    if (container.n_antennas, container.n_subcarriers) != dims {
        return Err(Error::dims(
            format!("{dims:?}"),
            format!("{:?}", (container.n_antennas, container.n_subcarriers)),
        ));
    }
    let grid = meta.grid;
    if container.records.len() != grid.len() {
        return Err(Error::Format(format!(
            "{} records for a {}-point grid",
            container.records.len(),
            grid.len()
        )));
    }
    let mut entries = Vec::with_capacity(grid.len());
    for (i, record) in container.records.into_iter().enumerate() {
        if record.walk.is_some() {
            return Err(Error::Format("fingerprint files carry no walk metadata".into()));
        }
        if record.position != grid.point_at(i) {
            return Err(Error::Format(format!("record {i} is not at its grid point")));
        }
        entries.push(FingerprintEntry {
            position: record.position,
            lost_link: record.adp.is_zero(),
            adp: record.adp,
        });
    }
    Ok(FingerprintDb {
        grid,
        entries,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> GridSpec {
        GridSpec {
            origin: Vec2::new(2.0, -1.0),
            spacing: 1.0,
            n_rows: n,
            n_cols: n,
        }
    }

    fn small_db(n: usize) -> FingerprintDb {
        build_db(
            &Environment::sparse(),
            &unit_grid(n),
            &ArrayConfig::default(),
            &OfdmConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn one_point_grid_has_one_entry() {
        assert_eq!(small_db(1).len(), 1);
    }

    #[test]
    fn free_space_entries_are_all_nonzero() {
        let db = build_db(
            &Environment::free_space(Vec2::new(0.0, 0.0)),
            &unit_grid(3),
            &ArrayConfig::default(),
            &OfdmConfig::default(),
        )
        .unwrap();
        assert_eq!(db.len(), 9);
        assert!(db.entries.iter().all(|e| !e.adp.is_zero() && !e.lost_link));
        for (i, e) in db.entries.iter().enumerate() {
            assert_eq!(e.position, db.grid.point_at(i));
        }
    }

    #[test]
    fn radius_queries_on_a_three_by_three_grid() {
        let db = small_db(3);
        let center = db.grid.point(1, 1);
        assert_eq!(db.neighbors_within(center, 0.5).len(), 1);
        assert_eq!(db.neighbors_within(center, 0.0).len(), 1);
        let five = db.neighbors_within(center, 1.1);
        assert_eq!(five.len(), 5);
        assert_eq!(five[0].index, 4);
        // orthogonal neighbors tie at distance 1 and come back in row-major order
        let ties: Vec<usize> = five[1..].iter().map(|n| n.index).collect();
        assert_eq!(ties, vec![1, 3, 5, 7]);
        assert_eq!(db.neighbors_within(center, 1.5).len(), 9);
    }

    #[test]
    fn query_far_outside_grid_is_empty() {
        let db = small_db(3);
        assert!(db.neighbors_within(Vec2::new(100.0, 100.0), 2.0).is_empty());
    }

    #[test]
    fn nearest_index_clamps() {
        let g = unit_grid(3);
        assert_eq!(g.nearest_index(Vec2::new(3.1, 0.2)), g.index(1, 1));
        assert_eq!(g.nearest_index(Vec2::new(-50.0, 50.0)), g.index(2, 0));
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.adpf");
        let db = small_db(3);
        save_db(&db, &path).unwrap();
        let back = load_db(&path).unwrap();
        assert_eq!(back, db);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_db(&path), Err(Error::TruncatedFile(_))));

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_db(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.adpf"), dir.path().join("b.adpf"));
        save_db(&small_db(3), &a).unwrap();
        save_db(&small_db(3), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(sidecar_path(&a)).unwrap(),
            fs::read(sidecar_path(&b)).unwrap()
        );
    }
}
