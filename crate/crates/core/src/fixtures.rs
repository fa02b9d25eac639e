//! Deterministic synthetic clinical data.
//!
//! [`ClinicalWorld::generate`] builds an in-memory cohort (100 patients with
//! admissions, ICU stays, labs, diagnoses and prescriptions) from a seeded
//! ChaCha stream. Writers lay it out as CSV trees that `etl::build_database`
//! consumes: a small demo tree carrying every null token and a malformed
//! row, and a flat EHRSQL-style benchmark tree.
//!
//! The benchmark world contains a planted anemia cohort so the top-three
//! drug query has a known answer: Furosemide (6), Heparin (4), Metoprolol
//! Tartrate (3). Decoys are excluded only by the time ordering, the age
//! filter or the year filter.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::etl::DEFAULT_NULL_TOKENS;

pub const DEFAULT_SEED: u64 = 0x4d33_2100;
pub const PATIENT_COUNT: usize = 100;
pub const ANEMIA_CODE: &str = "D649";
pub const ANEMIA_TITLE: &str = "anemia, unspecified";

pub const TOP_THREE_DRUGS_SQL: &str = "SELECT T3.drug
FROM (
  SELECT T2.drug, DENSE_RANK() OVER (ORDER BY COUNT(*) DESC) AS C1
  FROM (
    SELECT admissions.subject_id, diagnoses_icd.charttime, admissions.hadm_id
    FROM diagnoses_icd
    JOIN admissions ON diagnoses_icd.hadm_id = admissions.hadm_id
    WHERE diagnoses_icd.icd_code = (
      SELECT d_icd_diagnoses.icd_code
      FROM d_icd_diagnoses
      WHERE d_icd_diagnoses.long_title = 'anemia, unspecified'
    )
    AND strftime('%Y',diagnoses_icd.charttime) >= '2100'
  ) AS T1
  JOIN (
    SELECT admissions.subject_id, prescriptions.drug, prescriptions.starttime, admissions.hadm_id
    FROM prescriptions
    JOIN admissions ON prescriptions.hadm_id = admissions.hadm_id
    WHERE admissions.age >= 60
    AND strftime('%Y',prescriptions.starttime) >= '2100'
  ) AS T2
  ON T1.subject_id = T2.subject_id
  WHERE T1.charttime < T2.starttime
    AND T1.hadm_id = T2.hadm_id
  GROUP BY T2.drug
) AS T3
WHERE T3.C1 <= 3;";

const GENDERS: &[&str] = &["F", "M"];
const ADMISSION_TYPES: &[&str] =
    &["EW EMER.", "URGENT", "ELECTIVE", "OBSERVATION ADMIT", "DIRECT EMER.", "SURGICAL SAME DAY ADMISSION"];
const INSURANCE: &[&str] = &["Medicare", "Medicaid", "Other"];
const MARITAL: &[&str] = &["MARRIED", "SINGLE", "WIDOWED", "DIVORCED"];
const CAREUNITS: &[&str] = &[
    "Medical Intensive Care Unit (MICU)",
    "Surgical Intensive Care Unit (SICU)",
    "Cardiac Vascular Intensive Care Unit (CVICU)",
    "Trauma SICU (TSICU)",
];
const LAB_ITEMS: &[(i64, &str, &str, f64, f64)] = &[
    (50809, "Glucose", "mg/dL", 60.0, 300.0),
    (50912, "Creatinine", "mg/dL", 0.4, 4.0),
    (51222, "Hemoglobin", "g/dL", 6.0, 17.0),
    (50971, "Potassium", "mEq/L", 2.8, 6.2),
    (50983, "Sodium", "mEq/L", 125.0, 150.0),
    (50931, "Glucose, Whole Blood", "mg/dL", 60.0, 300.0),
    (50821, "pO2", "mm Hg", 40.0, 400.0),
    (50813, "Lactate", "mmol/L", 0.5, 8.0),
    (50882, "Bicarbonate", "mEq/L", 14.0, 34.0),
    (51265, "Platelet Count", "K/uL", 40.0, 450.0),
];
const ICD_CODES: &[(&str, &str)] = &[
    ("D649", ANEMIA_TITLE),
    ("I10", "essential (primary) hypertension"),
    ("E119", "type 2 diabetes mellitus without complications"),
    ("N179", "acute kidney failure, unspecified"),
    ("J189", "pneumonia, unspecified organism"),
    ("4019", "unspecified essential hypertension"),
    ("I4891", "unspecified atrial fibrillation"),
    ("E785", "hyperlipidemia, unspecified"),
];
const DRUGS: &[(&str, &str, &str, &str)] = &[
    ("Acetaminophen", "650", "mg", "PO"),
    ("Heparin", "5000", "UNIT", "SC"),
    ("Furosemide", "20", "mg", "IV"),
    ("Metoprolol Tartrate", "25", "mg", "PO"),
    ("Pantoprazole", "40", "mg", "PO"),
    ("Insulin", "0-10", "UNIT", "SC"),
    ("Vancomycin", "1000", "mg", "IV"),
    ("Sodium Chloride 0.9%  Flush", "3", "mL", "IV"),
    ("Docusate Sodium", "100", "mg", "PO"),
    ("Senna", "8.6", "mg", "PO"),
];

fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719468;
    let era = z.div_euclid(146097);
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

/// Minutes since 1970-01-01 00:00.
pub fn minutes_at(y: i64, m: i64, d: i64, hh: i64, mm: i64) -> i64 {
    days_from_civil(y, m, d) * 1440 + hh * 60 + mm
}

/// `YYYY-MM-DD HH:MM:SS`
pub fn format_minutes(t: i64) -> String {
    let (y, m, d) = civil_from_days(t.div_euclid(1440));
    let r = t.rem_euclid(1440);
    format!("{y:04}-{m:02}-{d:02} {:02}:{:02}:00", r / 60, r % 60)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub subject_id: i64,
    pub gender: &'static str,
    pub anchor_age: i64,
    pub anchor_year: i64,
    pub dob: String,
    pub dod: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub subject_id: i64,
    pub hadm_id: i64,
    pub admittime: String,
    pub dischtime: String,
    pub admission_type: &'static str,
    pub insurance: &'static str,
    pub marital_status: Option<&'static str>,
    pub age: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcuStay {
    pub subject_id: i64,
    pub hadm_id: i64,
    pub stay_id: i64,
    pub first_careunit: &'static str,
    pub last_careunit: &'static str,
    pub intime: String,
    pub outtime: String,
    pub los: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabEvent {
    pub subject_id: i64,
    pub hadm_id: i64,
    pub itemid: i64,
    pub charttime: String,
    pub valuenum: Option<f64>,
    pub valueuom: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub subject_id: i64,
    pub hadm_id: i64,
    pub icd_code: &'static str,
    pub charttime: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prescription {
    pub subject_id: i64,
    pub hadm_id: i64,
    pub starttime: String,
    pub stoptime: String,
    pub drug: &'static str,
    pub dose_val_rx: &'static str,
    pub dose_unit_rx: &'static str,
    pub route: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalWorld {
    pub patients: Vec<Patient>,
    pub admissions: Vec<Admission>,
    pub icustays: Vec<IcuStay>,
    pub lab_items: Vec<(i64, &'static str)>,
    pub labevents: Vec<LabEvent>,
    pub icd_codes: Vec<(&'static str, &'static str)>,
    pub diagnoses: Vec<Diagnosis>,
    pub prescriptions: Vec<Prescription>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Everything in one directory; tables keep bare names.
    Flat,
    /// `hosp/` and `icu/` subdirectories; tables get module prefixes.
    Modules,
}

fn drug(name: &str) -> (&'static str, &'static str, &'static str, &'static str) {
    *DRUGS.iter().find(|d| d.0 == name).expect("known drug")
}

impl ClinicalWorld {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = ClinicalWorld {
            patients: Vec::new(),
            admissions: Vec::new(),
            icustays: Vec::new(),
            lab_items: LAB_ITEMS.iter().map(|l| (l.0, l.1)).collect(),
            labevents: Vec::new(),
            icd_codes: ICD_CODES.to_vec(),
            diagnoses: Vec::new(),
            prescriptions: Vec::new(),
        };
        let mut next_hadm = 20_000_000;
        let mut next_stay = 30_000_000;
        for i in 0..PATIENT_COUNT {
            let subject_id = 10_000_032 + 17 * i as i64;
            let anchor_age = rng.gen_range(18..=91);
            let anchor_year = rng.gen_range(2100..=2180);
            let dob_t = minutes_at(anchor_year - anchor_age, rng.gen_range(1..=12), rng.gen_range(1..=28), 0, 0);
            let dod = rng.gen_bool(0.12).then(|| {
                format_minutes(minutes_at(
                    anchor_year + rng.gen_range(1..=4),
                    rng.gen_range(1..=12),
                    rng.gen_range(1..=28),
                    0,
                    0,
                ))
            });
            w.patients.push(Patient {
                subject_id,
                gender: GENDERS.choose(&mut rng).unwrap(),
                anchor_age,
                anchor_year,
                dob: format_minutes(dob_t),
                dod,
            });
            for _ in 0..rng.gen_range(1..=3) {
                let year = anchor_year + rng.gen_range(0..=3);
                let admit = minutes_at(
                    year,
                    rng.gen_range(1..=12),
                    rng.gen_range(1..=28),
                    rng.gen_range(0..24),
                    rng.gen_range(0..60),
                );
                let hadm_id = next_hadm;
                next_hadm += 1;
                w.admissions.push(Admission {
                    subject_id,
                    hadm_id,
                    admittime: format_minutes(admit),
                    dischtime: format_minutes(admit + rng.gen_range(1440..=20 * 1440)),
                    admission_type: ADMISSION_TYPES.choose(&mut rng).unwrap(),
                    insurance: INSURANCE.choose(&mut rng).unwrap(),
                    marital_status: if rng.gen_bool(0.15) { None } else { Some(MARITAL.choose(&mut rng).unwrap()) },
                    age: anchor_age + (year - anchor_year),
                });
                if rng.gen_bool(0.45) {
                    let intime = admit + rng.gen_range(60..=600);
                    let outtime = intime + rng.gen_range(720..=12 * 1440);
                    let first = *CAREUNITS.choose(&mut rng).unwrap();
                    w.icustays.push(IcuStay {
                        subject_id,
                        hadm_id,
                        stay_id: next_stay,
                        first_careunit: first,
                        last_careunit: if rng.gen_bool(0.8) { first } else { CAREUNITS.choose(&mut rng).unwrap() },
                        intime: format_minutes(intime),
                        outtime: format_minutes(outtime),
                        los: (outtime - intime) as f64 / 1440.0,
                    });
                    next_stay += 1;
                }
                // the first patient has no lab history
                let n_labs = if i == 0 { 0 } else { rng.gen_range(0..=6) };
                for j in 0..n_labs {
                    let (itemid, _, uom, lo, hi) = *LAB_ITEMS.choose(&mut rng).unwrap();
                    let raw: f64 = rng.gen_range(lo..hi);
                    w.labevents.push(LabEvent {
                        subject_id,
                        hadm_id,
                        itemid,
                        charttime: format_minutes(admit + 45 * (j + 1) + rng.gen_range(0..45)),
                        valuenum: (!rng.gen_bool(0.05)).then(|| (raw * 100.0).round() / 100.0),
                        valueuom: uom,
                    });
                }
                let n_codes = rng.gen_range(1..=3);
                let mut codes: Vec<&(&str, &str)> = ICD_CODES[1..].choose_multiple(&mut rng, n_codes).collect();
                codes.sort();
                for (code, _) in codes {
                    w.diagnoses.push(Diagnosis {
                        subject_id,
                        hadm_id,
                        icd_code: code,
                        charttime: format_minutes(admit),
                    });
                }
                for _ in 0..rng.gen_range(0..=4) {
                    let (name, dose, unit, route) = *DRUGS.choose(&mut rng).unwrap();
                    let start = admit + rng.gen_range(60..=3000);
                    w.prescriptions.push(Prescription {
                        subject_id,
                        hadm_id,
                        starttime: format_minutes(start),
                        stoptime: format_minutes(start + rng.gen_range(1440..=5 * 1440)),
                        drug: name,
                        dose_val_rx: dose,
                        dose_unit_rx: unit,
                        route,
                    });
                }
            }
        }
        w.plant_anemia_cohort(&mut next_hadm);
        w
    }

    fn plant_anemia_cohort(&mut self, next_hadm: &mut i64) {
        let old: Vec<Patient> = self.patients.iter().filter(|p| p.anchor_age >= 62).take(4).cloned().collect();
        let young = self.patients.iter().find(|p| p.anchor_age < 50).cloned().expect("young patient");
        assert_eq!(old.len(), 4, "seed yields too few older patients");
        // (patient, year, drugs given after the diagnosis, drugs given before it)
        type Doses<'a> = &'a [(&'a str, usize)];
        let plan: [(&Patient, i64, Doses, Doses); 5] = [
            (&old[0], 2150, &[("Furosemide", 2), ("Heparin", 2), ("Metoprolol Tartrate", 1)], &[("Vancomycin", 3)]),
            (&old[1], 2151, &[("Furosemide", 2), ("Heparin", 1), ("Metoprolol Tartrate", 1), ("Pantoprazole", 1)], &[]),
            (
                &old[2],
                2152,
                &[
                    ("Furosemide", 2),
                    ("Heparin", 1),
                    ("Metoprolol Tartrate", 1),
                    ("Acetaminophen", 1),
                    ("Pantoprazole", 1),
                ],
                &[("Vancomycin", 4)],
            ),
            (&young, 2153, &[("Insulin", 9)], &[]),
            (&old[3], 2099, &[("Heparin", 9)], &[]),
        ];
        for (p, year, after, before) in plan {
            let hadm_id = *next_hadm;
            *next_hadm += 1;
            let admit = minutes_at(year, 3, 14, 8, 30);
            let diag = admit + 2 * 1440;
            self.admissions.push(Admission {
                subject_id: p.subject_id,
                hadm_id,
                admittime: format_minutes(admit),
                dischtime: format_minutes(admit + 9 * 1440),
                admission_type: "EW EMER.",
                insurance: "Medicare",
                marital_status: Some("MARRIED"),
                age: p.anchor_age,
            });
            self.diagnoses.push(Diagnosis {
                subject_id: p.subject_id,
                hadm_id,
                icd_code: ANEMIA_CODE,
                charttime: format_minutes(diag),
            });
            let mut k = 0;
            let mut give = |name: &str, count: usize, base: i64, w: &mut Vec<Prescription>| {
                let (drug, dose, unit, route) = drug(name);
                for _ in 0..count {
                    k += 1;
                    let start = base + 37 * k;
                    w.push(Prescription {
                        subject_id: p.subject_id,
                        hadm_id,
                        starttime: format_minutes(start),
                        stoptime: format_minutes(start + 1440),
                        drug,
                        dose_val_rx: dose,
                        dose_unit_rx: unit,
                        route,
                    });
                }
            };
            for &(name, n) in after {
                give(name, n, diag, &mut self.prescriptions);
            }
            for &(name, n) in before {
                give(name, n, admit, &mut self.prescriptions);
            }
        }
    }

    pub fn patient(&self, subject_id: i64) -> Option<&Patient> {
        self.patients.iter().find(|p| p.subject_id == subject_id)
    }

    pub fn admission(&self, hadm_id: i64) -> Option<&Admission> {
        self.admissions.iter().find(|a| a.hadm_id == hadm_id)
    }

    pub fn lab_label(&self, itemid: i64) -> Option<&'static str> {
        self.lab_items.iter().find(|l| l.0 == itemid).map(|l| l.1)
    }
}

fn fmt_real(x: f64) -> String {
    let s = format!("{x}");
    if s.contains(['.', 'e', 'E']) || !x.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn opt(s: Option<&str>, null: &str) -> String {
    s.map_or_else(|| null.to_string(), str::to_string)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(true).from_writer(w)
}

fn write_rows(path: &Path, gzip: bool, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path)?;
    let sink: Box<dyn Write> =
        if gzip { Box::new(GzEncoder::new(file, Compression::default())) } else { Box::new(file) };
    let mut w = csv_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    let sink = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    drop(sink);
    Ok(())
}

/// Writes `patients`, `admissions` and a gzipped `icustays` for the demo
/// cohort. Missing values rotate through every null token; `admissions`
/// ends with one short row.
pub fn write_demo_csvs(world: &ClinicalWorld, dir: &Path, layout: Layout) -> io::Result<()> {
    let (hosp, icu) = match layout {
        Layout::Flat => (dir.to_path_buf(), dir.to_path_buf()),
        Layout::Modules => (dir.join("hosp"), dir.join("icu")),
    };
    let mut tokens = DEFAULT_NULL_TOKENS.iter().cycle();
    let patients: Vec<Vec<String>> = world
        .patients
        .iter()
        .map(|p| {
            vec![
                p.subject_id.to_string(),
                p.gender.to_string(),
                p.anchor_age.to_string(),
                p.anchor_year.to_string(),
                opt(p.dod.as_deref(), tokens.next().unwrap()),
            ]
        })
        .collect();
    write_rows(
        &hosp.join("patients.csv"),
        false,
        &["subject_id", "gender", "anchor_age", "anchor_year", "dod"],
        &patients,
    )?;

    let mut admissions: Vec<Vec<String>> = world
        .admissions
        .iter()
        .map(|a| {
            vec![
                a.subject_id.to_string(),
                a.hadm_id.to_string(),
                a.admittime.clone(),
                a.dischtime.clone(),
                a.admission_type.to_string(),
                a.insurance.to_string(),
                opt(a.marital_status, tokens.next().unwrap()),
            ]
        })
        .collect();
    admissions.push(vec!["10000032".into(), "29999999".into(), "2150-01-01 00:00:00".into()]);
    write_rows(
        &hosp.join("admissions.csv"),
        false,
        &["subject_id", "hadm_id", "admittime", "dischtime", "admission_type", "insurance", "marital_status"],
        &admissions,
    )?;
    write_rows(&icu.join("icustays.csv.gz"), true, ICUSTAYS_HEADER, &icustay_rows(world))
}

const ICUSTAYS_HEADER: &[&str] =
    &["subject_id", "hadm_id", "stay_id", "first_careunit", "last_careunit", "intime", "outtime", "los"];

fn icustay_rows(world: &ClinicalWorld) -> Vec<Vec<String>> {
    world
        .icustays
        .iter()
        .map(|s| {
            vec![
                s.subject_id.to_string(),
                s.hadm_id.to_string(),
                s.stay_id.to_string(),
                s.first_careunit.to_string(),
                s.last_careunit.to_string(),
                s.intime.clone(),
                s.outtime.clone(),
                fmt_real(s.los),
            ]
        })
        .collect()
}

/// The full EHRSQL-style table set in one directory, plain CSV, empty
/// fields for missing values.
pub fn write_benchmark_csvs(world: &ClinicalWorld, dir: &Path) -> io::Result<()> {
    let p: Vec<Vec<String>> = world
        .patients
        .iter()
        .map(|p| {
            vec![
                p.subject_id.to_string(),
                p.gender.to_string(),
                p.dob.clone(),
                opt(p.dod.as_deref(), ""),
                p.anchor_age.to_string(),
                p.anchor_year.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("patients.csv"),
        false,
        &["subject_id", "gender", "dob", "dod", "anchor_age", "anchor_year"],
        &p,
    )?;
    let a: Vec<Vec<String>> = world
        .admissions
        .iter()
        .map(|a| {
            vec![
                a.subject_id.to_string(),
                a.hadm_id.to_string(),
                a.admittime.clone(),
                a.dischtime.clone(),
                a.admission_type.to_string(),
                a.insurance.to_string(),
                opt(a.marital_status, ""),
                a.age.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("admissions.csv"),
        false,
        &["subject_id", "hadm_id", "admittime", "dischtime", "admission_type", "insurance", "marital_status", "age"],
        &a,
    )?;
    write_rows(&dir.join("icustays.csv"), false, ICUSTAYS_HEADER, &icustay_rows(world))?;
    let items: Vec<Vec<String>> = world.lab_items.iter().map(|(id, l)| vec![id.to_string(), l.to_string()]).collect();
    write_rows(&dir.join("d_labitems.csv"), false, &["itemid", "label"], &items)?;
    let labs: Vec<Vec<String>> = world
        .labevents
        .iter()
        .map(|l| {
            vec![
                l.subject_id.to_string(),
                l.hadm_id.to_string(),
                l.itemid.to_string(),
                l.charttime.clone(),
                l.valuenum.map(fmt_real).unwrap_or_default(),
                l.valueuom.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("labevents.csv"),
        false,
        &["subject_id", "hadm_id", "itemid", "charttime", "valuenum", "valueuom"],
        &labs,
    )?;
    let codes: Vec<Vec<String>> = world.icd_codes.iter().map(|(c, t)| vec![c.to_string(), t.to_string()]).collect();
    write_rows(&dir.join("d_icd_diagnoses.csv"), false, &["icd_code", "long_title"], &codes)?;
    let dx: Vec<Vec<String>> = world
        .diagnoses
        .iter()
        .map(|d| vec![d.subject_id.to_string(), d.hadm_id.to_string(), d.icd_code.to_string(), d.charttime.clone()])
        .collect();
    write_rows(&dir.join("diagnoses_icd.csv"), false, &["subject_id", "hadm_id", "icd_code", "charttime"], &dx)?;
    let rx: Vec<Vec<String>> = world
        .prescriptions
        .iter()
        .map(|r| {
            vec![
                r.subject_id.to_string(),
                r.hadm_id.to_string(),
                r.starttime.clone(),
                r.stoptime.clone(),
                r.drug.to_string(),
                r.dose_val_rx.to_string(),
                r.dose_unit_rx.to_string(),
                r.route.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("prescriptions.csv"),
        false,
        &["subject_id", "hadm_id", "starttime", "stoptime", "drug", "dose_val_rx", "dose_unit_rx", "route"],
        &rx,
    )
}

/// Cases for the benchmark tree. Candidates are equivalent rewrites of the
/// gold queries, so a correct harness scores every answerable case.
pub const BENCHMARK_CASES: &str = r#"{"id":"q001","question":"How many patients are in the database?","gold_sql":"SELECT COUNT(DISTINCT subject_id) FROM patients","candidate_sql":"SELECT COUNT(*) FROM patients","is_answerable":true}
{"id":"q002","question":"Among patients who were diagnosed with anemia, unspecified since 2100, what are the top three most commonly prescribed medications that followed during the same hospital visit for patients in their 60 or above?","gold_sql":"__TOP_THREE__","candidate_sql":"__TOP_THREE__","is_answerable":true}
{"id":"q003","question":"How many admissions were there this year?","gold_sql":"SELECT COUNT(*) FROM admissions WHERE strftime('%Y', admittime) = strftime('%Y', 'now')","candidate_sql":"SELECT COUNT(hadm_id) FROM admissions WHERE admittime >= datetime('now', 'start of year') AND admittime < datetime('now', 'start of year', '+1 year')","is_answerable":true}
{"id":"q004","question":"Which lab items measure glucose?","gold_sql":"SELECT label FROM d_labitems WHERE label LIKE '%glucose%'","candidate_sql":"SELECT DISTINCT label FROM d_labitems WHERE instr(lower(label), 'glucose') > 0 ORDER BY label DESC","is_answerable":true}
{"id":"q005","question":"What is the average glucose value?","gold_sql":"SELECT AVG(valuenum) FROM labevents WHERE itemid IN (SELECT itemid FROM d_labitems WHERE label = 'Glucose')","candidate_sql":"SELECT ROUND(AVG(l.valuenum), 9) FROM labevents l JOIN d_labitems d ON l.itemid = d.itemid WHERE d.label = 'Glucose'","is_answerable":true}
{"id":"q006","question":"How many ICU stays started in each first care unit?","gold_sql":"SELECT first_careunit, COUNT(*) FROM icustays GROUP BY first_careunit","candidate_sql":"SELECT first_careunit, COUNT(stay_id) AS n FROM icustays GROUP BY 1 ORDER BY n DESC","is_answerable":true}
{"id":"q007","question":"What is the gender of patient 10000032?","gold_sql":"SELECT gender FROM patients WHERE subject_id = 10000032","candidate_sql":"SELECT lower(gender) FROM patients WHERE subject_id = '10000032'","is_answerable":true}
{"id":"q008","question":"What is the favourite colour of patient 10000032?","gold_sql":"null","candidate_sql":"null","is_answerable":false}
"#;

pub fn benchmark_cases_ndjson() -> String {
    let top = serde_json::to_string(TOP_THREE_DRUGS_SQL).unwrap();
    BENCHMARK_CASES.replace("\"__TOP_THREE__\"", &top)
}
