# Body of the fulfillment root-cause attachment. Runs inside the attachment
# boilerplate, which provides `args` (key=value strings) and `findings`.
facts = dict(a.split("=", 1) for a in args if "=" in a)


def rows(key):
    return int(facts.get(key, "0") or 0)


checks = [
    ("missing-delivery-request", "table:erp_delivery_request", rows("dr_rows") == 0),
    ("delivery-application-not-effective", "table:erp_delivery_request",
     facts.get("dr_status", "EFFECTIVE") != "EFFECTIVE"),
    ("direct-shipment-asn-missing", "table:srm_vendor_asn",
     facts.get("shipment_mode") == "DIRECT" and rows("po_rows") > 0 and rows("asn_rows") == 0),
    ("outbound-not-executed", "table:wms_outbound_delivery", facts.get("ob_status") == "CREATED"),
    ("erp-sync-gap", "table:erp_material_document", facts.get("ob_status") == "EXECUTED" and rows("md_rows") == 0),
    ("site-receipt-missing", "table:wms_site_receipt", rows("md_rows") > 0 and rows("receipt_rows") == 0),
]
hit = next(((kind, stage) for kind, stage, fired in checks if fired), None)
findings["facts"] = facts
findings["blockage"] = hit[0] if hit else None
findings["blocking_stage"] = hit[1] if hit else None
