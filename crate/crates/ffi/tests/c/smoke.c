#include <stdio.h>
#include <string.h>

#include "segrl.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "check failed: %s (line %d)\n",      \
                    #cond, __LINE__);                            \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    const uint8_t a[4] = {1, 1, 0, 0};
    const uint8_t b[4] = {0, 1, 1, 0};
    double iou = 0.0;
    CHECK(segrl_iou(a, b, 2, 2, &iou) == SEGRL_OK);
    CHECK(iou > 0.333 && iou < 0.334);
    CHECK(segrl_iou(NULL, b, 2, 2, &iou) == SEGRL_ERR_NULL_POINTER);
    CHECK(segrl_last_error() != NULL);

    char *rle = NULL;
    CHECK(segrl_rle_encode(a, 2, 2, &rle) == SEGRL_OK);
    uint8_t back[4];
    uint32_t w = 0, h = 0;
    CHECK(segrl_rle_decode(rle, back, sizeof back, &w, &h) == SEGRL_OK);
    CHECK(w == 2 && h == 2 && memcmp(a, back, 4) == 0);
    segrl_string_free(rle);

    int64_t score = -1;
    CHECK(segrl_tiered_accuracy_reward(0.9, NULL, &score) == SEGRL_OK);
    CHECK(score == 4);

    SegrlTask *task = NULL;
    CHECK(segrl_task_generate(0, 0, &task) == SEGRL_OK);
    char *breakdown = NULL;
    CHECK(segrl_total_reward("<think>x</think>", task, NULL, &breakdown) == SEGRL_OK);
    CHECK(strstr(breakdown, "\"total\":0") != NULL);
    segrl_string_free(breakdown);

    SegrlTrainer *trainer = NULL;
    CHECK(segrl_trainer_new("{\"iterations\":1,\"dataset_size\":20}", &trainer) == SEGRL_OK);
    char *metrics = NULL;
    CHECK(segrl_trainer_step(trainer, &metrics) == SEGRL_OK);
    CHECK(strstr(metrics, "\"iteration\":1") != NULL);
    segrl_string_free(metrics);
    bool done = false;
    CHECK(segrl_trainer_is_done(trainer, &done) == SEGRL_OK && done);
    segrl_trainer_free(trainer);
    segrl_task_free(task);

    printf("c smoke ok (segrl %s)\n", segrl_version());
    return 0;
}
