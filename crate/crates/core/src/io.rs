//! Data ingestion: the site ratio table (CSV) and the self-describing study
//! population bundle (JSON).
//!
//! The ratio table has one row per (attribute, category); the first two
//! columns name them, an optional `census` column carries the target
//! proportion, and each remaining column carries one site's signed ratio
//! relative to the census (positive multiplies, negative divides). The JSON
//! bundle embeds the attribute schema with explicit category labels so the
//! file is self-describing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demographics::{
    joint_from_marginals, ratio_table_to_marginals, MarginalSet, SiteModel,
};
use crate::error::{CoreError, Result};
use crate::schema::AttributeSchema;
use crate::simulator::StudyPopulation;

/// Version string embedded in every serialized file.
pub const DATA_SCHEMA_VERSION: &str = "1";

/// Parsed contents of a site ratio table.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub schema: AttributeSchema,
    /// Census proportions per attribute, when the table carries them.
    pub census: Option<Vec<Vec<f64>>>,
    pub site_names: Vec<String>,
    /// Signed ratios, site-major then attribute then category.
    pub ratios: Vec<Vec<Vec<f64>>>,
}

/// Reads a ratio table CSV. Attribute and category order follow the file.
pub fn read_ratio_table(path: &Path) -> Result<RatioTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut cols = headers.iter();
    let (first, second) = (cols.next().unwrap_or(""), cols.next().unwrap_or(""));
    if first != "attribute" || second != "category" {
        return Err(CoreError::MalformedInput {
            row: 0,
            message: format!(
                "header must start with attribute,category; got {first},{second}"
            ),
        });
    }
    let rest: Vec<String> = cols.map(str::to_string).collect();
    let has_census = rest.first().map(String::as_str) == Some("census");
    let site_names: Vec<String> = if has_census {
        rest[1..].to_vec()
    } else {
        rest.clone()
    };
    if site_names.is_empty() {
        return Err(CoreError::EmptyInput("ratio table has no site columns".into()));
    }

    let mut attributes: Vec<(String, Vec<String>)> = Vec::new();
    let mut census: Vec<Vec<f64>> = Vec::new();
    let mut ratios: Vec<Vec<Vec<f64>>> = vec![Vec::new(); site_names.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        let attribute = record.get(0).unwrap_or("").to_string();
        let category = record.get(1).unwrap_or("").to_string();
        if attribute.is_empty() || category.is_empty() {
            return Err(CoreError::MalformedInput {
                row,
                message: "missing attribute or category".into(),
            });
        }
        if attributes.last().map(|(a, _)| a.as_str()) != Some(attribute.as_str()) {
            if attributes.iter().any(|(a, _)| a == &attribute) {
                return Err(CoreError::MalformedInput {
                    row,
                    message: format!("attribute {attribute} rows are not contiguous"),
                });
            }
            attributes.push((attribute.clone(), Vec::new()));
            census.push(Vec::new());
            for site in ratios.iter_mut() {
                site.push(Vec::new());
            }
        }
        attributes.last_mut().unwrap().1.push(category.clone());

        let parse = |field: usize, name: &str| -> Result<f64> {
            record
                .get(field)
                .ok_or_else(|| CoreError::MalformedInput {
                    row,
                    message: format!("missing {name} value"),
                })?
                .parse()
                .map_err(|_| CoreError::MalformedInput {
                    row,
                    message: format!("unparseable {name} value {:?}", record.get(field)),
                })
        };

        let mut field = 2;
        if has_census {
            census.last_mut().unwrap().push(parse(field, "census")?);
            field += 1;
        }
        for (j, name) in site_names.iter().enumerate() {
            let value = parse(field + j, name)?;
            if value == 0.0 {
                return Err(CoreError::ZeroRatio {
                    attribute: attribute.clone(),
                    category: category.clone(),
                });
            }
            ratios[j].last_mut().unwrap().push(value);
        }
    }
    if attributes.is_empty() {
        return Err(CoreError::EmptyInput("ratio table has no rows".into()));
    }
    Ok(RatioTable {
        schema: AttributeSchema::new(attributes)?,
        census: if has_census { Some(census) } else { None },
        site_names,
        ratios,
    })
}

/// Reads census marginals from a CSV with columns attribute, category,
/// proportion. Category order follows the file and must match the schema the
/// table will be combined with.
pub fn read_census_marginals(path: &Path) -> Result<(AttributeSchema, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut attributes: Vec<(String, Vec<String>)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let attribute = record.get(0).unwrap_or("").to_string();
        let category = record.get(1).unwrap_or("").to_string();
        let value: f64 = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| CoreError::MalformedInput {
                row,
                message: format!("unparseable proportion {:?}", record.get(2)),
            })?;
        if attributes.last().map(|(a, _)| a.as_str()) != Some(attribute.as_str()) {
            attributes.push((attribute, Vec::new()));
            values.push(Vec::new());
        }
        attributes.last_mut().unwrap().1.push(category);
        values.last_mut().unwrap().push(value);
    }
    if attributes.is_empty() {
        return Err(CoreError::EmptyInput("census table has no rows".into()));
    }
    Ok((AttributeSchema::new(attributes)?, values))
}

/// Builds the study population from a parsed ratio table: the census
/// marginals become the target joint, each ratio column becomes one site's
/// response joint under attribute independence.
pub fn population_from_table(
    table: &RatioTable,
    census_override: Option<&[Vec<f64>]>,
) -> Result<StudyPopulation> {
    let census_values = match census_override {
        Some(v) => v,
        None => table.census.as_deref().ok_or_else(|| {
            CoreError::InvalidConfig(
                "ratio table has no census column and no census file was given".into(),
            )
        })?,
    };
    let census = MarginalSet::new(&table.schema, census_values.to_vec())?;
    let target = joint_from_marginals(&table.schema, &census);
    let mut sites = Vec::with_capacity(table.site_names.len());
    for (name, ratios) in table.site_names.iter().zip(&table.ratios) {
        let marginals = ratio_table_to_marginals(&table.schema, &census, ratios)?;
        sites.push(SiteModel::new(
            name.clone(),
            joint_from_marginals(&table.schema, &marginals),
        ));
    }
    Ok(StudyPopulation {
        schema: table.schema.clone(),
        target,
        sites,
    })
}

#[derive(Serialize, Deserialize)]
struct PopulationBundle {
    schema_version: String,
    population: StudyPopulation,
}

/// Writes the study population as a self-describing JSON bundle.
pub fn write_population(population: &StudyPopulation, path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut writer,
        &PopulationBundle {
            schema_version: DATA_SCHEMA_VERSION.to_string(),
            population: population.clone(),
        },
    )?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Reads a study population bundle and validates it.
pub fn read_population(path: &Path) -> Result<StudyPopulation> {
    let reader = BufReader::new(File::open(path)?);
    let bundle: PopulationBundle = serde_json::from_reader(reader)?;
    if bundle.schema_version != DATA_SCHEMA_VERSION {
        return Err(CoreError::InvalidConfig(format!(
            "unsupported bundle schema version {}",
            bundle.schema_version
        )));
    }
    bundle.population.validate()?;
    Ok(bundle.population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, contents.as_bytes()).unwrap();
        f
    }

    const TOY_TABLE: &str = "\
attribute,category,census,S1,S2
age,young,0.6,1.2,-1.25
age,old,0.4,-1.4,1.3
gender,f,0.5,1.1,-1.1
gender,m,0.5,-1.09,1.1
";

    #[test]
    fn parses_toy_table() {
        let f = write_temp(TOY_TABLE);
        let table = read_ratio_table(f.path()).unwrap();
        assert_eq!(table.site_names, vec!["S1", "S2"]);
        assert_eq!(table.schema.cell_count(), 4);
        assert_eq!(table.census.as_ref().unwrap()[0], vec![0.6, 0.4]);
        assert_eq!(table.ratios[0][0], vec![1.2, -1.4]);
        assert_eq!(table.ratios[1][1], vec![-1.1, 1.1]);
    }

    #[test]
    fn population_from_toy_table() {
        let f = write_temp(TOY_TABLE);
        let table = read_ratio_table(f.path()).unwrap();
        let pop = population_from_table(&table, None).unwrap();
        pop.validate().unwrap();
        assert_eq!(pop.sites.len(), 2);
        // S1 age: [0.72, 0.2857] renormalized
        let m = crate::demographics::marginals_of_joint(&pop.schema, &pop.sites[0].response);
        let raw = [0.6 * 1.2, 0.4 / 1.4];
        let sum = raw[0] + raw[1];
        assert_abs_diff_eq!(m.attribute(0)[0], raw[0] / sum, epsilon = 1e-12);
    }

    #[test]
    fn zero_ratio_is_named() {
        let f = write_temp("attribute,category,census,S1\nage,young,0.6,0\nage,old,0.4,1.0\n");
        let err = read_ratio_table(f.path()).unwrap_err();
        match err {
            CoreError::ZeroRatio {
                attribute,
                category,
            } => {
                assert_eq!(attribute, "age");
                assert_eq!(category, "young");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn census_column_optional_with_override() {
        let f = write_temp("attribute,category,S1\nage,young,1.08\nage,old,-1.1\n");
        let table = read_ratio_table(f.path()).unwrap();
        assert!(table.census.is_none());
        assert!(population_from_table(&table, None).is_err());
        let census = vec![vec![0.5, 0.5]];
        let pop = population_from_table(&table, Some(&census)).unwrap();
        assert_eq!(pop.sites.len(), 1);
    }

    #[test]
    fn rejects_bad_headers_and_noncontiguous_attributes() {
        let f = write_temp("foo,bar,census,S1\na,b,0.5,1.0\n");
        assert!(read_ratio_table(f.path()).is_err());

        let f = write_temp(
            "attribute,category,census,S1\nage,young,0.5,1.0\ngender,f,0.5,1.0\nage,old,0.5,1.0\n",
        );
        assert!(matches!(
            read_ratio_table(f.path()),
            Err(CoreError::MalformedInput { .. })
        ));
    }

    #[test]
    fn census_csv_parses() {
        let f = write_temp("attribute,category,proportion\nage,young,0.7\nage,old,0.3\n");
        let (schema, values) = read_census_marginals(f.path()).unwrap();
        assert_eq!(schema.attribute_count(), 1);
        assert_eq!(values[0], vec![0.7, 0.3]);
    }

    #[test]
    fn bundle_roundtrip() {
        let f = write_temp(TOY_TABLE);
        let table = read_ratio_table(f.path()).unwrap();
        let pop = population_from_table(&table, None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_population(&pop, out.path()).unwrap();
        let back = read_population(out.path()).unwrap();
        assert_eq!(pop, back);
    }
}
