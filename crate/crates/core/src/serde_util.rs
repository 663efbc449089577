//! JSON-safe encodings for infinities: serde_json writes non-finite floats
//! as null, so unbounded domain edges and the infinite diagonal of H are
//! stored as explicit options instead.

pub(crate) mod neg_inf_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = v
            .iter()
            .map(|&x| if x == f64::NEG_INFINITY { None } else { Some(x) })
            .collect();
        opts.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opts = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opts
            .into_iter()
            .map(|o| o.unwrap_or(f64::NEG_INFINITY))
            .collect())
    }
}

pub(crate) mod pos_inf_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = v
            .iter()
            .map(|&x| if x == f64::INFINITY { None } else { Some(x) })
            .collect();
        opts.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opts = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opts.into_iter().map(|o| o.unwrap_or(f64::INFINITY)).collect())
    }
}

pub(crate) mod inf_matrix {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Array2<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Option<Vec<Vec<Option<f64>>>> = m.as_ref().map(|m| {
            m.rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .map(|&x| if x.is_finite() { Some(x) } else { None })
                        .collect()
                })
                .collect()
        });
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Array2<f64>>, D::Error> {
        let rows = Option::<Vec<Vec<Option<f64>>>>::deserialize(d)?;
        match rows {
            None => Ok(None),
            Some(rows) => {
                let n = rows.len();
                let mut m = Array2::from_elem((n, rows.first().map(|r| r.len()).unwrap_or(0)), 0.0);
                for (i, row) in rows.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        m[[i, j]] = v.unwrap_or(f64::INFINITY);
                    }
                }
                Ok(Some(m))
            }
        }
    }
}
