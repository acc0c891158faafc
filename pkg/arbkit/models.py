from django.db import models


class RunRecord(models.Model):
    """One command run: what was asked and a digest of what came out"""
    command = models.CharField(max_length=32)
    config_digest = models.CharField(max_length=64)
    report_digest = models.CharField(max_length=64)
    report = models.JSONField()
    exit_code = models.PositiveSmallIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)

    def __str__(self):
        return f"{self.command} run {self.report_digest[:12]} (exit {self.exit_code})"

    class Meta:
        verbose_name = "Run Record"
        verbose_name_plural = "Run Records"
        ordering = ['-created_at']
