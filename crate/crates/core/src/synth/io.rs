use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Map;

use super::{PingCsvReader, Scenario};
use crate::error::Result;
use crate::od::{write_od_csv, write_tract_attributes_csv};
use crate::spatial::{write_features, Feature};

pub const TRACT_ID_FIELD: &str = "GEOID";
pub const ZONE_ID_FIELD: &str = "zone_id";
pub const PARCEL_CLASS_FIELD: &str = "LEVEL1_LAN";
pub const PARCEL_ID_FIELD: &str = "parcel_id";

/// Paths of everything `write_scenario` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFiles {
    pub pings: PathBuf,
    pub tracts: PathBuf,
    pub attributes: PathBuf,
    pub zones: PathBuf,
    pub parcels: PathBuf,
    pub planted_od: PathBuf,
    pub planted_devices: PathBuf,
    pub scenario: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn polygon_features(polys: &[crate::geo::Polygon]) -> Vec<Feature> {
    polys
        .iter()
        .map(|p| Feature {
            id: p.id.clone(),
            properties: Map::new(),
            polygons: vec![p.clone()],
        })
        .collect()
}

/// Writes the scenario's inputs and planted truth into `dir`.
pub fn write_scenario(dir: &Path, s: &Scenario) -> Result<ScenarioFiles> {
    std::fs::create_dir_all(dir)?;
    let files = ScenarioFiles {
        pings: dir.join("pings.csv"),
        tracts: dir.join("tracts.geojson"),
        attributes: dir.join("tract_attributes.csv"),
        zones: dir.join("evac_zones.geojson"),
        parcels: dir.join("parcels.geojson"),
        planted_od: dir.join("planted_od.csv"),
        planted_devices: dir.join("planted_devices.csv"),
        scenario: dir.join("scenario.json"),
    };

    let mut w = create(&files.pings)?;
    io::copy(&mut PingCsvReader::new(s), &mut w)?;
    w.flush()?;

    write_features(create(&files.tracts)?, &polygon_features(&s.tracts), TRACT_ID_FIELD)?;
    write_features(create(&files.zones)?, &polygon_features(&s.zones), ZONE_ID_FIELD)?;
    write_features(create(&files.parcels)?, &s.parcel_features()?, PARCEL_ID_FIELD)?;
    write_tract_attributes_csv(create(&files.attributes)?, s.attribute_rows())?;
    write_od_csv(create(&files.planted_od)?, &s.planted_od())?;

    let mut w = csv::Writer::from_writer(create(&files.planted_devices)?);
    w.write_record([
        "device_id",
        "kind",
        "home_tract",
        "residence",
        "excluded",
        "evacuee",
        "dest_tract",
        "home_lat",
        "home_lon",
    ])?;
    for d in &s.devices {
        w.write_record([
            d.device_id.clone(),
            d.kind.to_string(),
            d.home_tract.clone(),
            d.residence.to_string(),
            d.expected.excluded.to_string(),
            d.expected.evacuee.to_string(),
            d.expected.destination_tract.clone().unwrap_or_default(),
            d.home_point.lat.to_string(),
            d.home_point.lon.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = create(&files.scenario)?;
    serde_json::to_writer_pretty(&mut w, &s.config)?;
    w.flush()?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::od::{read_od_csv, read_tract_attributes_csv};
    use crate::spatial::read_features;
    use crate::synth::{gen_scenario, ScenarioConfig};

    #[test]
    fn files_read_back() {
        let s = gen_scenario(&ScenarioConfig { devices: 40, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = write_scenario(dir.path(), &s).unwrap();
        let tracts = read_features(File::open(&f.tracts).unwrap(), TRACT_ID_FIELD).unwrap();
        assert_eq!(tracts.len(), s.tracts.len());
        assert_eq!(tracts[0].polygons[0], s.tracts[0]);
        let parcels = read_features(File::open(&f.parcels).unwrap(), PARCEL_ID_FIELD).unwrap();
        assert_eq!(parcels.len(), s.parcels.len());
        assert!(parcels[0].properties.contains_key(PARCEL_CLASS_FIELD));
        assert_eq!(read_od_csv(File::open(&f.planted_od).unwrap()).unwrap(), s.planted_od());
        let attrs = read_tract_attributes_csv(File::open(&f.attributes).unwrap()).unwrap();
        assert_eq!(attrs, s.attributes);
        let cfg: ScenarioConfig = serde_json::from_reader(File::open(&f.scenario).unwrap()).unwrap();
        assert_eq!(cfg, s.config);
    }
}
