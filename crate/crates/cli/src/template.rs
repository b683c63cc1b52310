//! Index families: `A{1..3}` in name lists, `forall i=1..3:` line prefixes
//! and `sum(j=1..3, body)` inside expressions.

/// An inclusive integer range with a bound variable.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Range {
    var: String,
    lo: i64,
    hi: i64,
}

fn parse_range(s: &str) -> Option<Range> {
    let (var, bounds) = s.split_once('=')?;
    let (lo, hi) = bounds.split_once("..")?;
    let var = var.trim();
    if var.is_empty() || !var.chars().all(|c| c.is_alphanumeric()) {
        return None;
    }
    Some(Range {
        var: var.to_string(),
        lo: lo.trim().parse().ok()?,
        hi: hi.trim().parse().ok()?,
    })
}

fn substitute(body: &str, var: &str, value: i64) -> String {
    body.replace(&format!("{{{var}}}"), &value.to_string())
}

/// Expand `A{1..3}` into `A1 A2 A3`.
pub fn expand_name(token: &str) -> Result<Vec<String>, String> {
    let Some(open) = token.find('{') else {
        return Ok(vec![token.to_string()]);
    };
    let close = token[open..].find('}').map(|c| c + open).ok_or("unclosed `{`")?;
    let (lo, hi) = token[open + 1..close].split_once("..").ok_or("expected `{lo..hi}`")?;
    let (lo, hi): (i64, i64) = (
        lo.trim().parse().map_err(|_| "bad lower bound")?,
        hi.trim().parse().map_err(|_| "bad upper bound")?,
    );
    let mut out = Vec::new();
    for v in lo..=hi {
        let t = format!("{}{v}{}", &token[..open], &token[close + 1..]);
        out.extend(expand_name(&t)?);
    }
    Ok(out)
}

/// Split `forall i=1..3: body` into one line per value.
pub fn expand_forall(line: &str) -> Result<Vec<String>, String> {
    let Some(rest) = line.trim_start().strip_prefix("forall ") else {
        return Ok(vec![line.to_string()]);
    };
    let (head, body) = rest.split_once(':').ok_or("expected `:` after the range")?;
    let r = parse_range(head).ok_or("expected `var=lo..hi`")?;
    let mut out = Vec::new();
    for v in r.lo..=r.hi {
        out.extend(expand_forall(&substitute(body.trim(), &r.var, v))?);
    }
    Ok(out)
}

/// Rewrite every `sum(j=lo..hi, body)` as `(body_lo + … + body_hi)`.
pub fn expand_sums(src: &str) -> Result<String, String> {
    let Some(start) = find_sum(src) else {
        return Ok(src.to_string());
    };
    let open = start + 3;
    let mut depth = 0usize;
    let mut close = None;
    for (i, c) in src[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    close = Some(open + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let close = close.ok_or("unclosed `sum(`")?;
    let inner = &src[open + 1..close];
    let (head, body) = inner.split_once(',').ok_or("expected `,` in sum")?;
    let r = parse_range(head).ok_or("expected `var=lo..hi` in sum")?;
    let body = expand_sums(body.trim())?;
    let terms: Vec<String> = (r.lo..=r.hi).map(|v| format!("({})", substitute(&body, &r.var, v))).collect();
    let expanded = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
    let tail = expand_sums(&src[close + 1..])?;
    Ok(format!("{}({expanded}){tail}", &src[..start]))
}

fn find_sum(src: &str) -> Option<usize> {
    let bytes = src.as_bytes();
    src.match_indices("sum(").map(|(i, _)| i).find(|&i| {
        i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_')
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(expand_name("F0{1..3}").unwrap(), ["F01", "F02", "F03"]);
        assert_eq!(expand_name("u").unwrap(), ["u"]);
    }

    #[test]
    fn sums_nest() {
        let s = expand_sums("m^2*sum(i=1..2, A{i}*sum(j=1..2, B{j}))").unwrap();
        assert_eq!(s, "m^2*((A1*((B1) + (B2))) + (A2*((B1) + (B2))))");
    }

    #[test]
    fn forall_lines() {
        let v = expand_forall("forall i=1..2: A{i}_t = F0{i}").unwrap();
        assert_eq!(v, ["A1_t = F01", "A2_t = F02"]);
    }
}
