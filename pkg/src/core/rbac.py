# src/core/rbac.py - Closed role model for hyperedge governance: root, tenant-admin(t), analyst

import logging

from ..models.access import Principal
from ..models.ontology import Hyperedge
from .errors import InsufficientRole, TenantIsolationError

logger = logging.getLogger(__name__)

ROLE_ROOT = "root"
ROLE_TENANT_ADMIN = "tenant-admin"
ROLE_ANALYST = "analyst"
ROLES = (ROLE_ROOT, ROLE_TENANT_ADMIN, ROLE_ANALYST)


def tenant_admin_role(tenant: str) -> str:
    return f"{ROLE_TENANT_ADMIN}:{tenant}"


def is_root(principal: Principal) -> bool:
    return principal.has_role(ROLE_ROOT)


def is_tenant_admin(principal: Principal, tenant: str) -> bool:
    return principal.has_role(ROLE_TENANT_ADMIN) and principal.tenant == tenant


def required_approval_role(hyperedge: Hyperedge, cross_scope: bool) -> str:
    if cross_scope or hyperedge.is_global:
        return ROLE_ROOT
    return tenant_admin_role(hyperedge.tenant)


def check_approval(reviewer: Principal, hyperedge: Hyperedge, cross_scope: bool) -> None:
    """Raises InsufficientRole naming the missing role; root may approve any scope."""
    if is_root(reviewer):
        return
    required = required_approval_role(hyperedge, cross_scope)
    if required == ROLE_ROOT or not is_tenant_admin(reviewer, hyperedge.tenant):
        logger.warning(f"Review Decision: '{reviewer.principal_id}' lacks role {required} for {hyperedge.id}")
        raise InsufficientRole(
            f"Reviewer '{reviewer.principal_id}' lacks role '{required}' to review {hyperedge.id}", required
        )


def check_submission(author: Principal, hyperedge: Hyperedge) -> None:
    """Tenant-scoped drafts can only be submitted by that tenant's principals (or root)."""
    if hyperedge.is_global or is_root(author):
        return
    if author.tenant != hyperedge.tenant:
        raise TenantIsolationError(
            f"Principal '{author.principal_id}' of tenant '{author.tenant}' cannot submit a draft scoped to "
            f"tenant '{hyperedge.tenant}'",
            {"author_tenant": author.tenant, "draft_tenant": hyperedge.tenant},
        )
