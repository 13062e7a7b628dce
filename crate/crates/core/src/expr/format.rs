use super::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Up to 6 significant digits.
    #[default]
    Short,
    /// Shortest text that parses back to the identical `f64`.
    Exact,
}

pub fn format(e: &Expr, precision: Precision) -> String {
    let mut out = String::new();
    write_expr(e, precision, &mut out);
    out
}

pub fn format_number(v: f64, precision: Precision) -> String {
    match precision {
        Precision::Exact => {
            let s = format!("{v:?}");
            match s.strip_suffix(".0") {
                Some(t) => t.to_string(),
                None => s,
            }
        }
        Precision::Short => short(v),
    }
}

fn short(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if (-5..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn is_negative_term(e: &Expr) -> bool {
    match e {
        Expr::Const(c) => *c < 0.0,
        Expr::Prod(fs) => matches!(fs.first(), Some(Expr::Const(c)) if *c < 0.0),
        _ => false,
    }
}

fn negate_term(e: &Expr) -> Expr {
    match e {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Prod(fs) => {
            let mut fs = fs.clone();
            if let Some(Expr::Const(c)) = fs.first_mut() {
                *c = -*c;
            }
            Expr::Prod(fs)
        }
        e => e.clone(),
    }
}

fn write_expr(e: &Expr, p: Precision, out: &mut String) {
    match e {
        Expr::Const(c) => out.push_str(&format_number(*c, p)),
        Expr::Var(i) => {
            out.push('x');
            out.push_str(&i.to_string());
        }
        Expr::Signomial(b, q) => {
            out.push('|');
            write_expr(b, p, out);
            out.push_str("|^");
            out.push_str(&format_number(*q, p));
        }
        Expr::Op(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write_expr(a, p, out);
            out.push(')');
        }
        Expr::Sum(ts) => {
            for (i, t) in ts.iter().enumerate() {
                if i == 0 {
                    write_expr(t, p, out);
                } else if is_negative_term(t) {
                    out.push_str(" - ");
                    write_expr(&negate_term(t), p, out);
                } else {
                    out.push_str(" + ");
                    write_expr(t, p, out);
                }
            }
        }
        Expr::Prod(fs) => write_prod(fs, p, out),
    }
}

fn write_prod(fs: &[Expr], p: Precision, out: &mut String) {
    let mut rest = fs;
    if let (Some(Expr::Const(c)), true) = (fs.first(), fs.len() > 1) {
        if *c == -1.0 {
            out.push('-');
        } else if *c != 1.0 {
            out.push_str(&format_number(*c, p));
            out.push('*');
        }
        rest = &fs[1..];
    }
    for (i, f) in rest.iter().enumerate() {
        if i > 0 {
            out.push('*');
        }
        let wrap = match f {
            Expr::Sum(_) | Expr::Prod(_) => true,
            Expr::Const(c) => *c < 0.0 || i > 0 || rest.len() < fs.len(),
            _ => false,
        };
        if wrap {
            out.push('(');
            write_expr(f, p, out);
            out.push(')');
        } else {
            write_expr(f, p, out);
        }
    }
}
