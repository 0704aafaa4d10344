use super::bind::{BoundProjection, BoundQuery};
use super::parse::PredOp;
use super::QueryError;
use crate::backend::{CmpOp, EncryptedPlan, Filter, Output, SortSpec, Test};
use crate::chunk::{enc_column, ope_column, value_column};
use crate::crypto::{det_encrypt, pseudonym, searchwords, ColumnKey, Keyring, Scheme};
use crate::ope::{OpeState, Probe};
use crate::schema::Schema;

fn cmp(op: PredOp) -> CmpOp {
    match op {
        PredOp::Eq => CmpOp::Eq,
        PredOp::Lt => CmpOp::Lt,
        PredOp::Le => CmpOp::Le,
        PredOp::Gt => CmpOp::Gt,
        PredOp::Ge => CmpOp::Ge,
        PredOp::Contains => unreachable!("CONTAINS has no comparison form"),
    }
}

/// Test on order codes for `x op v`, given the probe of `v`. A present `v`
/// keeps the operator. An absent `v` has no stored code inside its gap, so
/// both `<` and `<=` become `< gap` and both `>` and `>=` become `> gap`,
/// while `=` can match nothing.
pub fn code_test(op: PredOp, probe: Probe) -> Option<Test> {
    match probe {
        Probe::Exact(c) => Some(Test::Code { op: cmp(op), code: c.0 }),
        Probe::Gap(g) => Some(match op {
            PredOp::Eq => Test::Never,
            PredOp::Lt | PredOp::Le => Test::Code {
                op: CmpOp::Lt,
                code: g.0,
            },
            PredOp::Gt | PredOp::Ge => Test::Code {
                op: CmpOp::Gt,
                code: g.0,
            },
            PredOp::Contains => unreachable!("CONTAINS has no code form"),
        }),
        Probe::Exhausted { .. } => None,
    }
}

/// Replaces every literal with its ciphertext, token or order-code form.
pub fn rewrite(
    query: &BoundQuery,
    schema: &Schema,
    keys: &Keyring,
    ope: Option<&OpeState>,
    epoch: u64,
) -> Result<EncryptedPlan, QueryError> {
    let key = |name: &str| -> Result<&ColumnKey, QueryError> {
        keys.key(name).ok_or_else(|| QueryError::MissingKey(name.to_string()))
    };
    let mut filters = Vec::new();
    for p in &query.predicates {
        let col = &schema.columns[p.column];
        let text = col.data_type.format_value(&p.value);
        let name = col.name.as_str();
        match col.scheme {
            Scheme::None => filters.push(Filter {
                column: name.to_string(),
                test: Test::Plain {
                    op: cmp(p.op),
                    value: text,
                },
            }),
            Scheme::Deterministic => filters.push(Filter {
                column: enc_column(name),
                test: Test::Equals {
                    value: det_encrypt(key(name)?, text.as_bytes())?.to_base64(),
                },
            }),
            Scheme::Pseudonym => filters.push(Filter {
                column: enc_column(name),
                test: Test::Equals {
                    value: pseudonym(key(name)?, text.as_bytes())?.to_base64(),
                },
            }),
            Scheme::Searchwords => {
                let tokens = searchwords(key(name)?, &text)?;
                if tokens.is_empty() {
                    return Err(QueryError::Scheme {
                        column: name.to_string(),
                        msg: "CONTAINS needs at least one word".into(),
                    });
                }
                filters.extend(tokens.iter().map(|t| Filter {
                    column: enc_column(name),
                    test: Test::Contains { token: t.to_base64() },
                }));
            }
            Scheme::OrderPreserving => {
                let state = ope.ok_or_else(|| QueryError::MissingKey(name.to_string()))?;
                let probe = state
                    .probe(&col.data_type.order_key(&p.value))
                    .map_err(|e| QueryError::Corrupt {
                        column: name.to_string(),
                        msg: e.to_string(),
                    })?;
                let test = code_test(p.op, probe).ok_or_else(|| QueryError::ReencodeRequired(name.to_string()))?;
                filters.push(Filter {
                    column: ope_column(name),
                    test,
                });
            }
            Scheme::Probabilistic | Scheme::Homomorphic => unreachable!("rejected by bind"),
        }
    }

    let output = match &query.projection {
        BoundProjection::Rows(cols) => Output::Rows {
            columns: cols
                .iter()
                .map(|&i| value_column(&schema.columns[i].name, schema.columns[i].scheme))
                .collect(),
        },
        BoundProjection::Sum(i) => Output::Sum {
            column: enc_column(&schema.columns[*i].name),
        },
    };
    let order_by = query.order_by.map(|(i, desc)| {
        let col = &schema.columns[i];
        SortSpec {
            column: if col.scheme == Scheme::OrderPreserving {
                ope_column(&col.name)
            } else {
                col.name.clone()
            },
            desc,
        }
    });
    Ok(EncryptedPlan {
        epoch,
        output,
        filters,
        order_by,
        limit: query.limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ope::{OrderCode, OrderKey};
    use crate::query::{bind, parse_query};
    use crate::schema::{parse_schema, DataType};

    #[test]
    fn strictness_mapping() {
        let g = Probe::Gap(OrderCode(50));
        let e = Probe::Exact(OrderCode(70));
        assert_eq!(
            code_test(PredOp::Ge, g),
            Some(Test::Code {
                op: CmpOp::Gt,
                code: 50
            })
        );
        assert_eq!(
            code_test(PredOp::Gt, g),
            Some(Test::Code {
                op: CmpOp::Gt,
                code: 50
            })
        );
        assert_eq!(
            code_test(PredOp::Le, g),
            Some(Test::Code {
                op: CmpOp::Lt,
                code: 50
            })
        );
        assert_eq!(
            code_test(PredOp::Lt, g),
            Some(Test::Code {
                op: CmpOp::Lt,
                code: 50
            })
        );
        assert_eq!(code_test(PredOp::Eq, g), Some(Test::Never));
        assert_eq!(
            code_test(PredOp::Ge, e),
            Some(Test::Code {
                op: CmpOp::Ge,
                code: 70
            })
        );
        assert_eq!(
            code_test(PredOp::Eq, e),
            Some(Test::Code {
                op: CmpOp::Eq,
                code: 70
            })
        );
        let x = Probe::Exhausted {
            lo: OrderCode(3),
            hi: OrderCode(4),
        };
        assert_eq!(code_test(PredOp::Lt, x), None);
    }

    #[test]
    fn literals_become_ciphertext() {
        let schema = parse_schema(
            r#"{"table":"t","columns":[
                {"name":"k","type":"integer","encrypt":"order_preserving"},
                {"name":"c","type":"text","encrypt":"deterministic"}]}"#,
        )
        .unwrap();
        let ks = crate::crypto::Keyset::from_parts(
            [3; 32],
            crate::crypto::PaillierKeypair::from_primes(&5u32.into(), &7u32.into()).unwrap(),
        );
        let keys = ks.keyring("t", schema.column_schemes());
        let mut st = OpeState::new(DataType::Integer);
        st.encode_insert(OrderKey::Int(10)).unwrap();
        let q = bind(
            &parse_query("SELECT c FROM t WHERE c = 'Oslo' AND k >= 10 ORDER BY k DESC").unwrap(),
            &schema,
        )
        .unwrap();
        let plan = rewrite(&q, &schema, &keys, Some(&st), 4).unwrap();
        let expect = det_encrypt(keys.key("c").unwrap(), b"Oslo").unwrap().to_base64();
        assert_eq!(
            plan.filters[0],
            Filter {
                column: "c__enc".into(),
                test: Test::Equals { value: expect }
            }
        );
        assert_eq!(
            plan.filters[1].test,
            Test::Code {
                op: CmpOp::Ge,
                code: 1 << 63
            }
        );
        assert_eq!(
            plan.order_by,
            Some(SortSpec {
                column: "k__ope".into(),
                desc: true
            })
        );
        assert_eq!(plan.epoch, 4);
        let text = serde_json::to_string(&plan).unwrap();
        assert!(!text.contains("Oslo"));

        let without = keys.without_column("c");
        assert!(matches!(
            rewrite(&q, &schema, &without, Some(&st), 4),
            Err(QueryError::MissingKey(_))
        ));
    }
}
