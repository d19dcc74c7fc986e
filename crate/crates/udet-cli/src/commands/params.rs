//! `udet params`: per-section parameter counts, diffed against the published
//! layer table for the standard variant.

use udet_core::model::{
    full_scale_targets, target_ok, UdetModel, VariantSpec, WidthScale, TOTAL_TARGET,
};

use crate::{CliError, CliResult};

pub fn run(variant: &str) -> CliResult {
    let variant: VariantSpec = variant
        .parse()
        .map_err(|e: udet_core::UdetError| CliError::Usage(e.to_string()))?;
    let (model, reg) =
        UdetModel::build::<f32>(variant, 512, WidthScale::Full).map_err(CliError::Run)?;
    let audit = model.audit(&reg);

    println!("variant: {}", variant.name());
    println!("{:<24} {:>12}", "section", "parameters");
    for (label, count) in &audit.rows {
        println!("{label:<24} {count:>12}");
    }
    println!("{:<24} {:>12}", "total", audit.total);
    if audit.fusion_scalars > 0 {
        println!("{:<24} {:>12}  (reported separately)", "fusion_weights", audit.fusion_scalars);
    }

    let mut mismatches = Vec::new();
    if variant == VariantSpec::udet() {
        println!("\ndiff against the published table:");
        for target in full_scale_targets() {
            let actual = audit.row(target.label).unwrap_or(0);
            let ok = target_ok(&target, actual);
            let tol = if target.rel_tol == 0.0 {
                "exact".to_string()
            } else {
                format!("within {:.1}%", target.rel_tol * 100.0)
            };
            println!(
                "  {:<24} {:>12} vs {:>12} [{moniker}] {tol}",
                target.label,
                actual,
                target.expected,
                moniker = if ok { "ok" } else { "MISMATCH" },
            );
            if !ok {
                mismatches.push(target.label);
            }
        }
        let ok = target_ok(&TOTAL_TARGET, audit.total);
        println!(
            "  {:<24} {:>12} vs {:>12} [{}] within 0.1%",
            "total",
            audit.total,
            TOTAL_TARGET.expected,
            if ok { "ok" } else { "MISMATCH" }
        );
        if !ok {
            mismatches.push("total");
        }
    } else if variant == VariantSpec::unet() {
        // only the contraction stack is shared with the published table
        let target = full_scale_targets().into_iter().find(|t| t.label == "contraction_convs");
        if let Some(t) = target {
            let actual = audit.row(t.label).unwrap_or(0);
            let ok = target_ok(&t, actual);
            println!(
                "\ncontraction stack: {actual} vs {} [{}]",
                t.expected,
                if ok { "ok" } else { "MISMATCH" }
            );
            if !ok {
                mismatches.push(t.label);
            }
        }
    }

    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("parameter audit mismatch: {}", mismatches.join(", "))))
    }
}
