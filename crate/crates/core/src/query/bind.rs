use super::parse::{Literal, PredOp, Projection, QueryPlan};
use super::QueryError;
use crate::crypto::Scheme;
use crate::schema::{DataType, Schema, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BoundProjection {
    /// Schema column indexes, in output order.
    Rows(Vec<usize>),
    Sum(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundPredicate {
    pub column: usize,
    pub op: PredOp,
    pub value: Value,
}

/// A query checked against a schema: names resolved, literals typed and every
/// operator legal for its column's scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundQuery {
    pub projection: BoundProjection,
    pub predicates: Vec<BoundPredicate>,
    /// Column index and descending flag.
    pub order_by: Option<(usize, bool)>,
    pub limit: Option<u64>,
}

/// Whether the backend can evaluate `op` on a column of this scheme.
pub fn op_allowed(op: PredOp, scheme: Scheme) -> bool {
    use Scheme::*;
    match op {
        PredOp::Eq => matches!(scheme, None | Deterministic | Pseudonym | OrderPreserving),
        PredOp::Lt | PredOp::Le | PredOp::Gt | PredOp::Ge => matches!(scheme, None | OrderPreserving),
        PredOp::Contains => scheme == Searchwords,
    }
}

pub fn bind(plan: &QueryPlan, schema: &Schema) -> Result<BoundQuery, QueryError> {
    if plan.table != schema.table {
        return Err(QueryError::UnknownTable(plan.table.clone()));
    }
    let lookup = |name: &str| {
        schema
            .column(name)
            .map(|(i, _)| i)
            .ok_or_else(|| QueryError::UnknownColumn(name.to_string()))
    };
    let scheme_err = |column: &str, msg: String| QueryError::Scheme {
        column: column.to_string(),
        msg,
    };

    let projection = match &plan.projection {
        Projection::All => BoundProjection::Rows((0..schema.columns.len()).collect()),
        Projection::Columns(cols) => BoundProjection::Rows(cols.iter().map(|c| lookup(c)).collect::<Result<_, _>>()?),
        Projection::Sum(col) => {
            let i = lookup(col)?;
            let scheme = schema.columns[i].scheme;
            if scheme != Scheme::Homomorphic {
                return Err(scheme_err(
                    col,
                    format!("SUM needs a homomorphic column, `{col}` is {}", scheme.as_str()),
                ));
            }
            if plan.order_by.is_some() || plan.limit.is_some() {
                return Err(scheme_err(col, "SUM cannot be combined with ORDER BY or LIMIT".into()));
            }
            BoundProjection::Sum(i)
        }
    };

    let mut predicates = Vec::with_capacity(plan.predicates.len());
    for p in &plan.predicates {
        let i = lookup(&p.column)?;
        let col = &schema.columns[i];
        if !op_allowed(p.op, col.scheme) {
            return Err(scheme_err(
                &p.column,
                format!(
                    "`{}` is not supported on {} column `{}`",
                    p.op.as_str(),
                    col.scheme.as_str(),
                    p.column
                ),
            ));
        }
        let value = match (&p.literal, col.data_type) {
            (Literal::Number(raw), DataType::Text) => {
                return Err(QueryError::Literal {
                    column: p.column.clone(),
                    msg: format!("`{raw}` must be quoted for text column `{}`", p.column),
                })
            }
            (lit, ty) => ty.parse_value(lit.raw()).map_err(|e| QueryError::Literal {
                column: p.column.clone(),
                msg: e.to_string(),
            })?,
        };
        predicates.push(BoundPredicate {
            column: i,
            op: p.op,
            value,
        });
    }

    let order_by = match &plan.order_by {
        None => None,
        Some(o) => {
            let i = lookup(&o.column)?;
            let scheme = schema.columns[i].scheme;
            if !matches!(scheme, Scheme::None | Scheme::OrderPreserving) {
                return Err(scheme_err(
                    &o.column,
                    format!("cannot ORDER BY {} column `{}`", scheme.as_str(), o.column),
                ));
            }
            Some((i, o.desc))
        }
    };

    Ok(BoundQuery {
        projection,
        predicates,
        order_by,
        limit: plan.limit,
    })
}
